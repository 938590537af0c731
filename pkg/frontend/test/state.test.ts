import { describe, expect, it } from "vitest";

import { applyEvent, emptyView, repairingPages, markRepairing } from "../src/state.js";
import type { ServiceEvent } from "../src/types.js";

function ev(seq: number, event: string, data: Record<string, unknown>): ServiceEvent {
  return { seq, event, data };
}

describe("run view state", () => {
  it("failed attempt shows the count and the frame issue in the feed", () => {
    const view = emptyView("r1", 3);
    applyEvent(view, ev(0, "page", { page: 2, state: "start" }));
    applyEvent(view, ev(1, "attempt", {
      page: 2, revision: 1, safe: true, safety_reason: "",
      alpha: 0.5, eta: 0.9, frame_issues: ["missing red scarf"],
      identity_issues: [], accepted: false, image: null, cost_tokens: 100,
    }));
    const card = view.cards[1];
    expect(card.attempts).toBe(2); // attempt 2 of the budget
    expect(card.state).toBe("generating");
    expect(view.feed.some((f) => f.kind === "frame" && f.text === "missing red scarf")).toBe(true);
  });

  it("never takes an image from an unsafe attempt, even if one is forged", () => {
    const view = emptyView("r1", 1);
    applyEvent(view, ev(0, "attempt", {
      page: 1, revision: 0, safe: false, safety_reason: "nudity",
      alpha: null, eta: null, frame_issues: [], identity_issues: [],
      accepted: false, image: "img-unsafe", cost_tokens: 1,
    }));
    expect(view.cards[0].image).toBeNull();
    expect(view.feed.some((f) => f.kind === "safety" && f.text.includes("nudity"))).toBe(true);
  });

  it("duplicate seqs from a replayed stream are ignored", () => {
    const view = emptyView("r1", 1);
    const warning = ev(5, "warning", { message: "planner re-asked" });
    applyEvent(view, warning);
    applyEvent(view, warning);
    applyEvent(view, ev(4, "warning", { message: "stale" })); // older than lastSeq
    expect(view.feed.filter((f) => f.kind === "warning")).toHaveLength(1);
  });

  it("audit flags problem pages and page_done clears the flag", () => {
    const view = emptyView("r1", 5);
    applyEvent(view, ev(0, "audit", {
      round: 0, beta: 0.6, problem_pages: [4],
      critiques: [{ text: "prop drifts", page_indices: [4] }], cost_tokens: 1,
    }));
    expect(view.cards[3].flagged).toBe(true);
    expect(view.feed.some((f) => f.kind === "audit" && f.text === "prop drifts")).toBe(true);
    applyEvent(view, ev(1, "page_done", {
      page: 4, image: "img-p4-r0", attempts: 1, acceptance: "repaired",
      alpha: 0.9, eta: 0.9, cost_tokens: 2,
    }));
    expect(view.cards[3].flagged).toBe(false);
    expect(view.cards[3].image).toBe("img-p4-r0");
  });

  it("done event settles in-flight cards and enables repair state", () => {
    const view = emptyView("r1", 2);
    applyEvent(view, ev(0, "page", { page: 1, state: "start" }));
    markRepairing(view, [2]);
    applyEvent(view, ev(1, "done", { round: 1, pages: 2, cost_tokens: 9 }));
    expect(view.status).toBe("done");
    expect(view.cards.every((c) => c.state === "done")).toBe(true);
    expect(repairingPages(view)).toEqual([]);
  });

  it("cost counter follows the latest event", () => {
    const view = emptyView("r1", 1);
    applyEvent(view, ev(0, "planned", { pages: 1, cast: [], sheets: [], cost_tokens: 1600 }));
    applyEvent(view, ev(1, "attempt", {
      page: 1, revision: 0, safe: true, safety_reason: "", alpha: 0.9, eta: 0.9,
      frame_issues: [], identity_issues: [], accepted: true,
      image: "img", cost_tokens: 3800,
    }));
    expect(view.costTokens).toBe(3800);
  });
});
