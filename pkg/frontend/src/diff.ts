/** Parser for the engine's patch bundle (plain unified diff) so the
 * artifact panel can render per-file, per-line change views. */

export interface DiffLine {
  kind: "add" | "del" | "ctx" | "meta";
  text: string;
}

export interface DiffHunk {
  header: string;
  lines: DiffLine[];
}

export interface DiffFile {
  oldPath: string;
  newPath: string;
  hunks: DiffHunk[];
}

function stripPrefix(path: string): string {
  // unified diff headers carry a/ and b/ prefixes; /dev/null stays
  if (path.startsWith("a/") || path.startsWith("b/")) return path.slice(2);
  return path;
}

export function parseUnifiedDiff(text: string): DiffFile[] {
  const files: DiffFile[] = [];
  let file: DiffFile | null = null;
  let hunk: DiffHunk | null = null;
  const lines = text.split("\n");

  for (let i = 0; i < lines.length; i += 1) {
    const line = lines[i] ?? "";
    const next = lines[i + 1] ?? "";
    if (line.startsWith("--- ") && next.startsWith("+++ ")) {
      file = {
        oldPath: stripPrefix(line.slice(4).trim()),
        newPath: stripPrefix(next.slice(4).trim()),
        hunks: [],
      };
      files.push(file);
      hunk = null;
      i += 1;
      continue;
    }
    if (file === null) continue; // preamble outside any file
    if (line.startsWith("@@")) {
      hunk = { header: line, lines: [] };
      file.hunks.push(hunk);
      continue;
    }
    if (hunk === null) continue;
    if (line === "" && i === lines.length - 1) continue; // trailing \n
    if (line.startsWith("+")) {
      hunk.lines.push({ kind: "add", text: line.slice(1) });
    } else if (line.startsWith("-")) {
      hunk.lines.push({ kind: "del", text: line.slice(1) });
    } else if (line.startsWith(" ")) {
      hunk.lines.push({ kind: "ctx", text: line.slice(1) });
    } else {
      hunk.lines.push({ kind: "meta", text: line });
    }
  }
  return files;
}

export interface DiffStats {
  files: number;
  additions: number;
  deletions: number;
}

export function diffStats(files: DiffFile[]): DiffStats {
  let additions = 0;
  let deletions = 0;
  for (const file of files) {
    for (const hunk of file.hunks) {
      for (const line of hunk.lines) {
        if (line.kind === "add") additions += 1;
        else if (line.kind === "del") deletions += 1;
      }
    }
  }
  return { files: files.length, additions, deletions };
}
