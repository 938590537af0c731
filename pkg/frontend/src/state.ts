// The run view model. All state derives from service responses and
// events: a snapshot seeds the view, events patch it forward, and
// reloading rebuilds the same view from a fresh snapshot. No client-side
// authority, ever — in particular an image id is only accepted from an
// event that says the attempt was safe.

import type { CastMember, RunSnapshot, ServiceEvent, SheetRef } from "./types.js";

export type CardState = "pending" | "generating" | "repairing" | "done" | "failed";

export interface PageCard {
  index: number;
  text: string;
  image: string | null;
  attempts: number;
  maxAttempts: number;
  alpha: number | null;
  eta: number | null;
  acceptance: string | null;
  state: CardState;
  flagged: boolean;
  issues: string[];
}

export interface FeedItem {
  seq: number;
  kind: "safety" | "frame" | "identity" | "audit" | "warning" | "status";
  page: number | null;
  text: string;
}

export interface RunView {
  runId: string;
  status: string;
  round: number;
  pageCount: number;
  cards: PageCard[];
  cast: CastMember[];
  sheets: SheetRef[];
  costTokens: number;
  feed: FeedItem[];
  warnings: string[];
  lastSeq: number;
  repairSelection: Set<number>;
}

export function emptyView(runId: string, pageCount: number): RunView {
  return {
    runId,
    status: "planning",
    round: 0,
    pageCount,
    cards: Array.from({ length: pageCount }, (_, i) => emptyCard(i + 1)),
    cast: [],
    sheets: [],
    costTokens: 0,
    feed: [],
    warnings: [],
    lastSeq: -1,
    repairSelection: new Set(),
  };
}

function emptyCard(index: number): PageCard {
  return {
    index,
    text: "",
    image: null,
    attempts: 0,
    maxAttempts: 0,
    alpha: null,
    eta: null,
    acceptance: null,
    state: "pending",
    flagged: false,
    issues: [],
  };
}

export function viewFromSnapshot(snapshot: RunSnapshot): RunView {
  const view = emptyView(snapshot.run_id, snapshot.draft.page_count);
  view.status = snapshot.status;
  view.round = snapshot.round;
  view.cast = snapshot.cast;
  view.sheets = snapshot.sheets;
  view.costTokens = snapshot.cost.grand.total_tokens;
  view.warnings = [...snapshot.warnings];
  for (const page of snapshot.pages) {
    const card = view.cards[page.index - 1];
    card.text = page.text;
    card.image = page.image;
    card.attempts = page.attempts;
    card.alpha = page.alpha;
    card.eta = page.eta;
    card.acceptance = page.acceptance;
    card.state = "done";
  }
  return view;
}

function card(view: RunView, page: unknown): PageCard | null {
  const index = Number(page);
  if (!Number.isInteger(index) || index < 1 || index > view.cards.length) return null;
  return view.cards[index - 1];
}

export function applyEvent(view: RunView, event: ServiceEvent): RunView {
  if (event.seq <= view.lastSeq) return view; // replayed duplicate
  view.lastSeq = event.seq;
  const data = event.data;

  switch (event.event) {
    case "status": {
      view.status = String(data.status);
      view.feed.push({ seq: event.seq, kind: "status", page: null, text: view.status });
      break;
    }
    case "planned": {
      view.cast = (data.cast as CastMember[]) ?? [];
      view.sheets = (data.sheets as SheetRef[]) ?? [];
      for (const entry of (data.plan as Array<{ index: number; text: string }>) ?? []) {
        const target = card(view, entry.index);
        if (target) target.text = entry.text;
      }
      view.costTokens = Number(data.cost_tokens ?? view.costTokens);
      break;
    }
    case "page": {
      const target = card(view, data.page);
      if (target && data.state === "start") target.state = "generating";
      break;
    }
    case "attempt": {
      const target = card(view, data.page);
      if (!target) break;
      target.attempts = Number(data.revision) + 1;
      view.costTokens = Number(data.cost_tokens ?? view.costTokens);
      const safe = data.safe === true;
      if (safe) {
        target.alpha = data.alpha as number | null;
        target.eta = data.eta as number | null;
        // an image id is only ever taken from a safe attempt
        if (data.accepted === true && typeof data.image === "string") {
          target.image = data.image;
        }
      } else {
        view.feed.push({
          seq: event.seq,
          kind: "safety",
          page: target.index,
          text: `attempt ${data.revision}: rejected by the safety audit (${data.safety_reason})`,
        });
      }
      for (const issue of (data.frame_issues as string[]) ?? []) {
        target.issues.push(issue);
        view.feed.push({ seq: event.seq, kind: "frame", page: target.index, text: issue });
      }
      for (const issue of (data.identity_issues as string[]) ?? []) {
        target.issues.push(issue);
        view.feed.push({ seq: event.seq, kind: "identity", page: target.index, text: issue });
      }
      break;
    }
    case "page_done": {
      const target = card(view, data.page);
      if (!target) break;
      target.state = "done";
      target.image = typeof data.image === "string" ? data.image : target.image;
      target.attempts = Number(data.attempts ?? target.attempts);
      target.acceptance = String(data.acceptance ?? "");
      target.alpha = data.alpha as number | null;
      target.eta = data.eta as number | null;
      target.flagged = false;
      view.costTokens = Number(data.cost_tokens ?? view.costTokens);
      break;
    }
    case "audit": {
      const flagged = (data.problem_pages as number[]) ?? [];
      for (const c of view.cards) c.flagged = flagged.includes(c.index);
      const critiques = (data.critiques as Array<{ text: string; page_indices: number[] }>) ?? [];
      for (const critique of critiques) {
        view.feed.push({
          seq: event.seq,
          kind: "audit",
          page: critique.page_indices?.[0] ?? null,
          text: critique.text,
        });
      }
      view.costTokens = Number(data.cost_tokens ?? view.costTokens);
      break;
    }
    case "warning": {
      const text = String(data.message);
      if (!view.warnings.includes(text)) view.warnings.push(text);
      view.feed.push({ seq: event.seq, kind: "warning", page: null, text });
      break;
    }
    case "done": {
      view.status = "done";
      view.round = Number(data.round ?? view.round);
      view.costTokens = Number(data.cost_tokens ?? view.costTokens);
      for (const c of view.cards) {
        if (c.state === "repairing" || c.state === "generating") c.state = "done";
      }
      if (data.note) {
        view.feed.push({ seq: event.seq, kind: "status", page: null, text: String(data.note) });
      }
      break;
    }
    case "failed": {
      view.status = String(data.status ?? "failed");
      view.feed.push({
        seq: event.seq,
        kind: "status",
        page: null,
        text: `failed: ${data.message ?? data.error}`,
      });
      for (const c of view.cards) {
        if (c.state === "generating" || c.state === "repairing") c.state = "failed";
      }
      break;
    }
  }
  return view;
}

export function markRepairing(view: RunView, pages: number[]): void {
  for (const index of pages) {
    const target = view.cards[index - 1];
    if (target) target.state = "repairing";
  }
}

/** Cards currently animating a regeneration (used by tests and the DOM layer). */
export function repairingPages(view: RunView): number[] {
  return view.cards.filter((c) => c.state === "repairing").map((c) => c.index);
}

/** Stable projection for equality checks: two views that render the same. */
export function renderedProjection(view: RunView) {
  return {
    runId: view.runId,
    status: view.status,
    round: view.round,
    cards: view.cards.map((c) => ({
      index: c.index,
      text: c.text,
      image: c.image,
      attempts: c.attempts,
      alpha: c.alpha,
      eta: c.eta,
      acceptance: c.acceptance,
    })),
    cast: view.cast,
    sheets: view.sheets,
    costTokens: view.costTokens,
  };
}
