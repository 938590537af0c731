// The submit -> watch -> repair round trip against a mock service that
// speaks the documented HTTP contract.

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import {
  applyEvent,
  emptyView,
  markRepairing,
  renderedProjection,
  repairingPages,
  viewFromSnapshot,
} from "../src/state.js";
import { validateForm } from "../src/validate.js";
import { MockService } from "./mock_service.js";

const FORM = {
  text: "Milo the fox finds a lantern. Sage the owl helps him home.",
  pageCount: 5,
  style: "storybook",
  preset: "default",
};


async function watchToCompletion(api: ApiClient, runId: string, view: ReturnType<typeof emptyView>) {
  const events = await api.getEvents(runId, view.lastSeq);
  for (const event of events) applyEvent(view, event);
  return view;
}

describe("studio round trip", () => {
  it("submit -> watch -> done builds five finished cards", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    const { body } = validateForm(FORM);
    const { run_id } = await api.createRun(body!);

    const view = emptyView(run_id, FORM.pageCount);
    await watchToCompletion(api, run_id, view);

    expect(view.status).toBe("done");
    expect(view.cards).toHaveLength(5);
    expect(view.cards.every((c) => c.state === "done" && c.image !== null)).toBe(true);
    expect(view.cast.map((c) => c.id)).toEqual(["milo", "sage"]);
    expect(view.costTokens).toBe(13000);
  });

  it("an invalid form never reaches the network", () => {
    const service = new MockService();
    const { body, errors } = validateForm({ ...FORM, pageCount: 0 });
    expect(body).toBeUndefined();
    expect(errors[0].field).toBe("page_count");
    expect(service.requests).toHaveLength(0);
  });

  it("server-side config errors surface field by field", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    // bypass client validation to prove the server error path still maps
    const bad = { draft: { text: "x", page_count: 0, style: "s" }, config: {} };
    try {
      await api.createRun(bad as never);
      expect.unreachable();
    } catch (error) {
      const apiError = error as ApiError;
      expect(apiError.status).toBe(400);
      expect((apiError.body.errors as Array<{ field: string }>)[0].field).toBe("page_count");
    }
  });

  it("repair of page 3 re-renders only card 3", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    const { run_id } = await api.createRun(validateForm(FORM).body!);
    const view = emptyView(run_id, FORM.pageCount);
    await watchToCompletion(api, run_id, view);
    const imagesBefore = view.cards.map((c) => c.image);

    await api.repair(run_id, [3]);
    markRepairing(view, [3]);
    expect(repairingPages(view)).toEqual([3]); // only card 3 regenerates

    await watchToCompletion(api, run_id, view);
    expect(view.status).toBe("done");
    expect(repairingPages(view)).toEqual([]);
    const changed = view.cards
      .filter((c, i) => c.image !== imagesBefore[i])
      .map((c) => c.index);
    expect(changed).toEqual([3]); // card 3 swapped to the new image
    expect(view.cards[2].acceptance).toBe("repaired");
    expect(view.round).toBe(1);
  });

  it("global repair on a consistent book regenerates nothing", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    const { run_id } = await api.createRun(validateForm(FORM).body!);
    const view = emptyView(run_id, FORM.pageCount);
    await watchToCompletion(api, run_id, view);
    const imagesBefore = view.cards.map((c) => c.image);

    await api.repair(run_id); // no page selection: the audit decides
    await watchToCompletion(api, run_id, view);

    expect(view.status).toBe("done");
    expect(view.cards.map((c) => c.image)).toEqual(imagesBefore);
    expect(view.round).toBe(0);
    expect(view.feed.some((f) => f.text === "no repairs needed")).toBe(true);
  });

  it("RunBusy surfaces as a catchable error for the toast", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    const { run_id } = await api.createRun(validateForm(FORM).body!);
    service.runs.get(run_id)!.busy = true;
    try {
      await api.repair(run_id, [2]);
      expect.unreachable();
    } catch (error) {
      expect((error as ApiError).errorType).toBe("RunBusy");
    }
  });

  it("reload reconstructs an identical view from the snapshot", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    const { run_id } = await api.createRun(validateForm(FORM).body!);

    const watched = emptyView(run_id, FORM.pageCount);
    await watchToCompletion(api, run_id, watched);
    await api.repair(run_id, [2]);
    markRepairing(watched, [2]);
    await watchToCompletion(api, run_id, watched);

    const reloaded = viewFromSnapshot(await api.getRun(run_id));
    expect(renderedProjection(reloaded)).toEqual(renderedProjection(watched));
  });

  it("unsafe attempts never contribute an image to any card", async () => {
    const service = new MockService();
    const api = new ApiClient("", service.fetchLike);
    const { run_id } = await api.createRun(validateForm(FORM).body!);
    // splice a forged unsafe attempt into the stream (image present but safe=false)
    const run = service.runs.get(run_id)!;
    run.events.splice(4, 0, {
      seq: 3.5 as unknown as number, event: "attempt",
      data: {
        page: 1, revision: 0, safe: false, safety_reason: "nudity",
        alpha: null, eta: null, frame_issues: [], identity_issues: [],
        accepted: false, image: "img-unsafe", cost_tokens: 1,
      },
    });
    const view = emptyView(run_id, FORM.pageCount);
    await watchToCompletion(api, run_id, view);
    expect(view.cards.some((c) => c.image === "img-unsafe")).toBe(false);
  });
});
