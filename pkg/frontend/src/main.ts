import { ControlClient } from "./api.js";
import { StaleQuestion, ValidationError } from "./errors.js";
import { parseUnifiedDiff, diffStats } from "./diff.js";
import { ConsoleSession } from "./session.js";
import { chatCount, finalResult, perActorLines, timelineRows } from "./timeline.js";
import type { Artifact } from "./types.js";

const params = new URLSearchParams(window.location.search);
const ENDPOINT = params.get("endpoint") ?? "http://127.0.0.1:8765";

const $ = (id: string): HTMLElement => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
};

const client = new ControlClient(ENDPOINT);
let session: ConsoleSession | null = null;
let selectedArtifact = "";
let questionTimer: ReturnType<typeof setInterval> | null = null;

function setBanner(text: string, tone: "ok" | "warn" | "err"): void {
  const banner = $("banner");
  banner.textContent = text;
  banner.className = `banner ${tone}`;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

async function renderEpisodeList(): Promise<void> {
  let episodes;
  try {
    episodes = await client.listEpisodes();
    if (session === null) setBanner(`connected to ${ENDPOINT}`, "ok");
  } catch (err) {
    setBanner(`endpoint unreachable: ${String(err)}`, "err");
    return;
  }
  const list = $("episodes");
  list.replaceChildren();
  for (const ep of episodes) {
    const row = el("button", "episode");
    row.classList.toggle("active", session?.episodeId === ep.episode_id);
    row.append(
      el("span", "ep-id", ep.episode_id),
      el("span", "ep-task", ep.run_label),
      el("span", `ep-status st-${ep.status}`, ep.status),
    );
    row.addEventListener("click", () => void attachTo(ep.episode_id));
    list.append(row);
  }
  if (episodes.length === 0) {
    list.append(el("p", "placeholder", "no episodes registered yet"));
  }
}

function renderTimeline(): void {
  const body = $("timeline");
  body.replaceChildren();
  if (!session) {
    body.append(el("p", "placeholder", "attach to an episode"));
    return;
  }
  const rows = timelineRows(session.records);
  for (const row of rows) {
    const div = el("div", `step ${row.kind} ${row.success ? "ok" : "bad"}`);
    div.append(
      el("span", "idx", `#${row.index}`),
      el("span", "target", row.target),
      el("span", "by", `via ${row.decidedBy}`),
      el("span", "label", row.label),
    );
    if (row.detail) div.append(el("div", "detail", row.detail));
    body.append(div);
  }
  const result = finalResult(session.records);
  const footer = el("div", "summary");
  if (result) {
    footer.append(
      el("div", `status st-${result.status}`, `status: ${result.status}`),
      el("div", "tally", perActorLines(result).join("  ·  ")),
    );
  } else {
    footer.append(
      el(
        "div",
        "status st-running",
        `running · ${rows.length} steps · ${chatCount(session.records)} chats`,
      ),
    );
  }
  body.append(footer);
}

function renderQuestions(): void {
  const inbox = $("inbox");
  inbox.replaceChildren();
  if (!session || session.pending.length === 0) {
    inbox.append(el("p", "placeholder", "no pending questions"));
    return;
  }
  for (const q of session.pending) {
    const card = el("div", "question");
    card.append(
      el("div", "q-text", q.question),
      el("div", "q-context", q.context),
    );
    const input = el("textarea", "q-answer");
    input.placeholder = "clear, concise, actionable answer";
    const send = el("button", "q-send", "Answer");
    const note = el("div", "q-note");
    send.addEventListener("click", () => {
      void (async () => {
        try {
          await session?.answerQuestion(q.question_id, input.value);
          note.textContent = "sent";
        } catch (err) {
          if (err instanceof ValidationError) {
            note.textContent = "answer text must not be empty";
          } else if (err instanceof StaleQuestion) {
            note.textContent = "stale: already answered or timed out";
          } else {
            note.textContent = String(err);
          }
          renderQuestions();
          return;
        }
        renderQuestions();
      })();
    });
    card.append(input, send, note);
    inbox.append(card);
  }
}

function renderArtifacts(): void {
  const tabs = $("artifact-tabs");
  const view = $("artifact-view");
  tabs.replaceChildren();
  view.replaceChildren();
  const artifacts: Artifact[] = session?.artifacts ?? [];
  if (artifacts.length === 0) {
    view.append(el("p", "placeholder", "no artifacts yet"));
    return;
  }
  if (!artifacts.some((a) => a.kind === selectedArtifact)) {
    selectedArtifact = artifacts[0]?.kind ?? "";
  }
  for (const artifact of artifacts) {
    const tab = el("button", "tab", artifact.kind);
    tab.classList.toggle("active", artifact.kind === selectedArtifact);
    tab.addEventListener("click", () => {
      selectedArtifact = artifact.kind;
      renderArtifacts();
    });
    tabs.append(tab);
  }
  const current = artifacts.find((a) => a.kind === selectedArtifact);
  if (!current) return;
  if (current.kind === "changes_patch") {
    const files = parseUnifiedDiff(current.content);
    const stats = diffStats(files);
    view.append(
      el(
        "div",
        "diff-stats",
        `${stats.files} file(s), +${stats.additions} -${stats.deletions}`,
      ),
    );
    for (const file of files) {
      const section = el("div", "diff-file");
      section.append(el("div", "diff-path", `${file.oldPath} -> ${file.newPath}`));
      for (const hunk of file.hunks) {
        section.append(el("div", "diff-hunk", hunk.header));
        for (const line of hunk.lines) {
          section.append(el("pre", `diff-line ${line.kind}`, line.text));
        }
      }
      view.append(section);
    }
    if (files.length === 0) {
      view.append(el("p", "placeholder", "empty patch: repo already matched"));
    }
  } else {
    view.append(el("pre", "artifact-content", current.content));
  }
}

function renderAll(): void {
  renderTimeline();
  renderQuestions();
  renderArtifacts();
}

async function attachTo(episodeId: string): Promise<void> {
  if (session) await session.close();
  if (questionTimer) clearInterval(questionTimer);
  selectedArtifact = "";
  try {
    session = await ConsoleSession.attach(ENDPOINT, episodeId, {
      onChange: () => {
        setBanner(
          `episode ${episodeId} · ${session?.connection ?? ""} ${
            session?.lastError ? `(${session.lastError})` : ""
          }`,
          session?.connection === "failed" ? "err" : "ok",
        );
        renderAll();
      },
    });
  } catch (err) {
    setBanner(`attach failed: ${String(err)}`, "err");
    return;
  }
  setBanner(`episode ${episodeId} · attached`, "ok");
  void session.refreshArtifacts().catch(() => undefined);
  // pending questions surface by polling: the engine parks them before
  // the corresponding step record ever reaches the stream
  questionTimer = setInterval(() => {
    void session?.refreshQuestions().catch(() => undefined);
    void session?.refreshArtifacts().catch(() => undefined);
  }, 750);
  void renderEpisodeList();
  renderAll();
}

void renderEpisodeList();
setInterval(() => void renderEpisodeList(), 2000);
