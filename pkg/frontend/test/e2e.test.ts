import { spawn, type ChildProcess } from "node:child_process";
import { cp, mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterEach, describe, expect, it } from "vitest";

import { diffStats, parseUnifiedDiff } from "../src/diff.js";
import { ConsoleSession } from "../src/session.js";
import { finalResult, timelineRows } from "../src/timeline.js";

const FIXTURE_TASK = fileURLToPath(
  new URL("../../fixtures/tasks/t0", import.meta.url),
);

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

const cleanups: (() => Promise<void>)[] = [];

afterEach(async () => {
  while (cleanups.length > 0) await cleanups.pop()?.();
});

async function copyFixture(): Promise<string> {
  const dir = await mkdtemp(join(tmpdir(), "console-e2e-"));
  cleanups.push(() => rm(dir, { recursive: true, force: true }));
  await cp(FIXTURE_TASK, dir, { recursive: true });
  return dir;
}

interface Engine {
  child: ChildProcess;
  endpoint: string;
  episodeId: string;
  stdout: () => string;
  exited: Promise<number | null>;
}

/** Spawn the engine CLI serving one planner episode and wait until it
 * announces its endpoint and episode id on stdout. */
async function launchServe(
  taskDir: string,
  opts: { exitAfterEpisode?: boolean } = {},
): Promise<Engine> {
  const args = [
    "serve",
    "--port",
    "0",
    "--run",
    join(taskDir, "run.yaml"),
    "--policy",
    "planner",
    "--backend",
    "scripted:planner_transcript.yaml",
  ];
  if (opts.exitAfterEpisode ?? false) args.push("--exit-after-episode");
  const child = spawn("planweave", args, {
    stdio: ["ignore", "pipe", "pipe"],
  });
  let out = "";
  let err = "";
  child.stdout?.setEncoding("utf-8");
  child.stderr?.setEncoding("utf-8");
  child.stdout?.on("data", (chunk: string) => {
    out += chunk;
  });
  child.stderr?.on("data", (chunk: string) => {
    err += chunk;
  });
  const exited = new Promise<number | null>((resolve) =>
    child.on("close", (code) => resolve(code)),
  );
  cleanups.push(async () => {
    if (child.exitCode === null) child.kill("SIGKILL");
    await exited;
  });

  const deadline = Date.now() + 15_000;
  for (;;) {
    const endpoint = /control endpoint: (\S+)/.exec(out)?.[1];
    const episodeId = /episode id: (\S+)/.exec(out)?.[1];
    if (endpoint !== undefined && episodeId !== undefined) {
      return { child, endpoint, episodeId, stdout: () => out, exited };
    }
    if (Date.now() > deadline) {
      throw new Error(
        `engine never announced itself\nstdout: ${out}\nstderr: ${err}`,
      );
    }
    await sleep(50);
  }
}

describe("console against the live engine", () => {
  it("answers the parked question and follows the run to success", async () => {
    const taskDir = await copyFixture();
    const engine = await launchServe(taskDir);

    const session = await ConsoleSession.attach(
      engine.endpoint,
      engine.episodeId,
    );
    cleanups.push(() => session.close());

    const pending = await session.waitForQuestion(10_000);
    expect(pending).toHaveLength(1);
    expect(pending[0]?.question).toContain("dev bucket");

    const acknowledged = await session.answerQuestion(
      pending[0]!.question_id,
      "Yes, write to dev.",
    );
    expect(acknowledged).toBe(pending[0]?.question_id);

    await session.waitForEnd(20_000);
    expect(session.status).toBe("success");
    expect(session.connection).toBe("ended");
    expect(session.cursor).toBe(session.records.length);
    expect(finalResult(session.records)?.status).toBe("success");

    const rows = timelineRows(session.records);
    const hitl = rows.filter((r) => r.kind === "hitl");
    expect(hitl).toHaveLength(1);
    expect(hitl[0]?.mode).toBe("console");
    expect(hitl[0]?.detail).toContain("Yes, write to dev.");
    expect(rows.some((r) => r.target === "code_generator" && r.success)).toBe(
      true,
    );

    // the endpoint outlives the episode, so the finished run stays
    // browsable: final artifacts, patch bundle, episode summary
    const artifacts = await session.refreshArtifacts();
    const patch = artifacts.find((a) => a.kind === "changes_patch");
    expect(patch).toBeDefined();
    const files = parseUnifiedDiff(patch!.content);
    expect(files.length).toBeGreaterThan(0);
    expect(diffStats(files).additions).toBeGreaterThan(0);
    expect(files.some((f) => f.newPath.includes("user_txn_rollup"))).toBe(
      true,
    );

    const summaries = await session.client.listEpisodes();
    expect(summaries).toHaveLength(1);
    expect(summaries[0]).toMatchObject({
      episode_id: engine.episodeId,
      status: "success",
      events: session.records.length,
    });

    engine.child.kill("SIGINT");
    expect(await engine.exited).toBe(0);
    expect(engine.stdout()).toContain("status: success");
  });

  it("falls back to the default answer when nobody responds", async () => {
    const taskDir = await copyFixture();
    const runYaml = join(taskDir, "run.yaml");
    const text = await readFile(runYaml, "utf-8");
    await writeFile(
      runYaml,
      text.replace(
        "max_iterations: 10",
        "max_iterations: 10\n  hitl_timeout_seconds: 1.0",
      ),
    );

    const engine = await launchServe(taskDir, { exitAfterEpisode: true });
    const session = await ConsoleSession.attach(
      engine.endpoint,
      engine.episodeId,
    );
    cleanups.push(() => session.close());

    await session.waitForEnd(20_000);
    expect(session.status).toBe("success");

    const hitl = timelineRows(session.records).filter(
      (r) => r.kind === "hitl",
    );
    expect(hitl).toHaveLength(1);
    expect(hitl[0]?.mode).toBe("default");
    expect(hitl[0]?.detail).toContain("Human help is not available");

    expect(await engine.exited).toBe(0);
  });
});
