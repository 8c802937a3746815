/** DOM wiring for the judging flow: logic lives in api.ts / render.ts. */

import { fetchNextPair, fetchScores, makeNonce, submitJudgment } from "./api.js";
import { describeChart, lanePlan } from "./render.js";
import { Choice, LevelPayload, PairPayload } from "./types.js";

interface Session {
  annotator: string;
  current: PairPayload | null;
  nonce: string; // minted per pair; reused verbatim on retries
  judged: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderChart(level: LevelPayload): HTMLElement {
  const plan = lanePlan(level.chart_preview);
  const box = el("div", "chart");
  box.style.height = `${plan.height}px`;
  for (const y of plan.beatLines) {
    const line = el("div", "beat-line");
    line.style.top = `${y}px`;
    box.appendChild(line);
  }
  for (const arrow of plan.arrows) {
    const node = el("div", `arrow ${arrow.colorClass} ${arrow.glyphClass}`);
    node.style.top = `${arrow.y}px`;
    node.style.left = `${(arrow.lane * 100) / plan.lanes}%`;
    node.style.width = `${100 / plan.lanes}%`;
    box.appendChild(node);
  }
  return box;
}

function renderLevel(level: LevelPayload, label: string): HTMLElement {
  const panel = el("div", "panel");
  panel.appendChild(el("h2", undefined, `${label}: ${level.title}`));
  panel.appendChild(el("p", "hint", describeChart(level.chart_preview)));
  const scroll = el("div", "chart-scroll");
  scroll.appendChild(renderChart(level));
  panel.appendChild(scroll);
  return panel;
}

async function showScores(root: HTMLElement): Promise<void> {
  const scores = await fetchScores();
  root.replaceChildren(el("h1", undefined, "All pairs judged"));
  if (!scores) {
    root.appendChild(el("p", undefined, "No judgments recorded."));
    return;
  }
  root.appendChild(el("p", undefined, `${scores.judged_pairs} pairs received judgments.`));
  const table = el("table");
  const head = el("tr");
  for (const th of ["source", "concordance", "pairs"]) head.appendChild(el("th", undefined, th));
  table.appendChild(head);
  for (const [name, s] of Object.entries(scores.sources)) {
    const tr = el("tr");
    tr.appendChild(el("td", undefined, name));
    tr.appendChild(el("td", undefined, s.score.toFixed(3)));
    tr.appendChild(el("td", undefined, String(s.pairs)));
    table.appendChild(tr);
  }
  root.appendChild(table);
}

async function advance(session: Session, root: HTMLElement): Promise<void> {
  const next = await fetchNextPair(session.annotator);
  if (next.done) {
    session.current = null;
    await showScores(root);
    return;
  }
  session.current = next;
  session.nonce = makeNonce();
  root.replaceChildren();
  const header = el("div", "topbar");
  header.appendChild(el("span", undefined, `Judging as ${session.annotator}`));
  header.appendChild(el("span", undefined, `${session.judged} judged`));
  root.appendChild(header);
  const panels = el("div", "pair");
  panels.appendChild(renderLevel(next.level_a, "A"));
  panels.appendChild(renderLevel(next.level_b, "B"));
  root.appendChild(panels);
  const controls = el("div", "controls");
  const mk = (choice: Choice, text: string) => {
    const btn = el("button", undefined, text);
    btn.addEventListener("click", () => void judge(session, root, choice));
    return btn;
  };
  controls.appendChild(mk("a_harder", "A is harder (←)"));
  controls.appendChild(mk("b_harder", "B is harder (→)"));
  root.appendChild(controls);
}

async function judge(session: Session, root: HTMLElement, choice: Choice): Promise<void> {
  if (!session.current) return;
  await submitJudgment({
    pair_id: session.current.pair_id,
    choice,
    annotator: session.annotator,
    nonce: session.nonce,
  });
  // duplicates mean the vote already landed; either way, move on
  session.judged += 1;
  await advance(session, root);
}

export function start(root: HTMLElement): void {
  const form = el("div", "login");
  form.appendChild(el("h1", undefined, "Which chart is harder?"));
  const input = el("input");
  input.placeholder = "annotator name";
  const go = el("button", undefined, "Start");
  form.append(input, go);
  root.replaceChildren(form);

  const begin = () => {
    const name = input.value.trim();
    if (!name) return;
    const session: Session = { annotator: name, current: null, nonce: "", judged: 0 };
    document.addEventListener("keydown", (ev) => {
      if (!session.current) return;
      if (ev.key === "ArrowLeft") void judge(session, root, "a_harder");
      if (ev.key === "ArrowRight") void judge(session, root, "b_harder");
    });
    void advance(session, root);
  };
  go.addEventListener("click", begin);
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") begin();
  });
}

const rootNode = document.getElementById("app");
if (rootNode) {
  start(rootNode);
}
