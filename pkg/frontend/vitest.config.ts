import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the end-to-end tests drive a real engine process
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
