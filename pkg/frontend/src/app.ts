// DOM glue: the submit form, the live run view, and the repair controls.
// All data flows through ApiClient + the state module; this file only
// paints and forwards clicks.

import { ApiClient, ApiError } from "./api.js";
import { makeBrowserSource, subscribe, type Subscription } from "./events.js";
import {
  applyEvent,
  markRepairing,
  viewFromSnapshot,
  type PageCard,
  type RunView,
} from "./state.js";
import { validateForm, type FormInput } from "./validate.js";

const api = new ApiClient("");
let view: RunView | null = null;
let subscription: Subscription | null = null;

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

function toast(message: string): void {
  const host = document.getElementById("toasts")!;
  const node = el("div", "toast", message);
  host.appendChild(node);
  setTimeout(() => node.remove(), 4000);
}

// -- submit form -------------------------------------------------------------

function readForm(): FormInput {
  const value = (id: string) => (document.getElementById(id) as HTMLInputElement).value;
  const numberOr = (id: string): number | undefined => {
    const raw = value(id).trim();
    return raw === "" ? undefined : Number(raw);
  };
  return {
    text: value("draft-text"),
    pageCount: Number(value("page-count")),
    style: value("style") || "whimsical, soft-color children's picture-book style",
    preset: value("preset"),
    tauAlpha: numberOr("tau-alpha"),
    tauEta: numberOr("tau-eta"),
    tauBeta: numberOr("tau-beta"),
    frameBudget: numberOr("frame-budget"),
    sequenceRounds: numberOr("sequence-rounds"),
  };
}

function showFieldErrors(errors: { field: string; reason: string }[]): void {
  const host = document.getElementById("form-errors")!;
  host.replaceChildren();
  for (const error of errors) {
    host.appendChild(el("div", "field-error", `${error.field}: ${error.reason}`));
  }
}

async function submitStory(): Promise<void> {
  const { body, errors } = validateForm(readForm());
  showFieldErrors(errors);
  if (!body) return; // invalid: no network call
  try {
    const { run_id } = await api.createRun(body);
    openRun(run_id, body.draft.page_count);
  } catch (error) {
    if (error instanceof ApiError && Array.isArray(error.body.errors)) {
      showFieldErrors(error.body.errors as { field: string; reason: string }[]);
    } else {
      toast(String(error));
    }
  }
}

// -- run view ----------------------------------------------------------------

function artifactNode(runId: string, artifactId: string): HTMLElement {
  // scripted backends produce structured stand-ins; render those as a
  // labeled placeholder instead of a broken <img>
  const frame = el("div", "art");
  const img = el("img");
  img.src = api.artifactUrl(runId, artifactId);
  img.alt = artifactId;
  img.onerror = () => {
    img.remove();
    frame.appendChild(el("div", "art-placeholder", artifactId));
  };
  fetch(api.artifactUrl(runId, artifactId))
    .then((reply) => {
      const kind = reply.headers.get("content-type") ?? "";
      if (kind.includes("json")) {
        img.remove();
        return reply.json().then((doc) => {
          const placeholder = el("div", "art-placeholder");
          placeholder.appendChild(el("div", "art-id", artifactId));
          if (doc.prompt) placeholder.appendChild(el("div", "art-prompt", doc.prompt));
          frame.appendChild(placeholder);
        });
      }
      return undefined;
    })
    .catch(() => undefined);
  frame.appendChild(img);
  return frame;
}

function cardNode(current: RunView, card: PageCard): HTMLElement {
  const node = el("div", `card card-${card.state}${card.flagged ? " card-flagged" : ""}`);
  node.dataset.page = String(card.index);
  const head = el("div", "card-head");
  head.appendChild(el("span", "card-title", `page ${card.index}`));
  head.appendChild(el("span", "card-state", card.state));
  node.appendChild(head);

  if (card.image) {
    node.appendChild(artifactNode(current.runId, card.image));
  } else {
    node.appendChild(el("div", "art art-pending", card.state === "pending" ? "…" : "generating"));
  }
  if (card.text) node.appendChild(el("p", "card-text", card.text));

  const meta = el("div", "card-meta");
  meta.appendChild(el("span", undefined, `attempts ${card.attempts}`));
  if (card.alpha !== null) meta.appendChild(el("span", undefined, `faithfulness ${card.alpha}`));
  if (card.eta !== null) meta.appendChild(el("span", undefined, `identity ${card.eta}`));
  if (card.acceptance) meta.appendChild(el("span", undefined, card.acceptance));
  node.appendChild(meta);

  if (current.status === "done") {
    const pick = el("input") as HTMLInputElement;
    pick.type = "checkbox";
    pick.checked = current.repairSelection.has(card.index);
    pick.onchange = () => {
      if (pick.checked) current.repairSelection.add(card.index);
      else current.repairSelection.delete(card.index);
    };
    const label = el("label", "card-pick", " repair");
    label.prepend(pick);
    node.appendChild(label);
  }
  return node;
}

function render(): void {
  if (!view) return;
  const current = view;
  document.getElementById("form-panel")!.classList.add("hidden");
  document.getElementById("run-panel")!.classList.remove("hidden");

  (document.getElementById("run-title")!).textContent = `run ${current.runId}`;
  (document.getElementById("run-status")!).textContent =
    `${current.status} · round ${current.round} · ${current.costTokens} tokens`;

  const cast = document.getElementById("cast")!;
  cast.replaceChildren();
  for (const member of current.cast) {
    const chip = el("div", "cast-chip");
    const sheet = current.sheets.find((s) => s.character_id === member.id);
    if (sheet) chip.appendChild(artifactNode(current.runId, sheet.image));
    chip.appendChild(el("div", "cast-name", member.name));
    chip.appendChild(el("div", "cast-desc", member.descriptor));
    cast.appendChild(chip);
  }

  const grid = document.getElementById("pages")!;
  grid.replaceChildren(...current.cards.map((card) => cardNode(current, card)));

  const feed = document.getElementById("feed")!;
  feed.replaceChildren(
    ...current.feed.slice(-60).map((item) =>
      el("div", `feed-item feed-${item.kind}`,
         item.page === null ? item.text : `p${item.page} · ${item.text}`),
    ),
  );

  const controls = document.getElementById("repair-controls")!;
  controls.classList.toggle("hidden", current.status !== "done");
  const book = document.getElementById("download-book") as HTMLAnchorElement;
  book.href = api.bookArchiveUrl(current.runId);
}

function openRun(runId: string, pageCount: number): void {
  subscription?.close();
  api
    .getRun(runId)
    .then((snapshot) => {
      view = viewFromSnapshot(snapshot);
      render();
      subscription = subscribe(
        runId,
        (event) => {
          if (view) {
            applyEvent(view, event);
            render();
          }
        },
        makeBrowserSource(""),
      );
      window.location.hash = runId;
    })
    .catch((error) => toast(String(error)));
  // page count is only needed before the first snapshot arrives
  void pageCount;
}

async function triggerRepair(pages?: number[]): Promise<void> {
  if (!view) return;
  try {
    await api.repair(view.runId, pages);
    if (pages && pages.length > 0) markRepairing(view, pages);
    else markRepairing(view, view.cards.filter((c) => c.flagged).map((c) => c.index));
    view.status = "calibrating";
    view.repairSelection.clear();
    render();
  } catch (error) {
    if (error instanceof ApiError && error.errorType === "RunBusy") {
      toast("the run is busy — try again when it settles");
    } else {
      toast(String(error));
    }
  }
}

// -- wiring --------------------------------------------------------------------

export function boot(): void {
  document.getElementById("submit")!.onclick = () => void submitStory();
  document.getElementById("repair-selected")!.onclick = () => {
    const pages = view ? [...view.repairSelection].sort((a, b) => a - b) : [];
    if (pages.length === 0) {
      toast("pick at least one page, or run a global repair");
      return;
    }
    void triggerRepair(pages);
  };
  document.getElementById("repair-global")!.onclick = () => void triggerRepair();
  document.getElementById("back")!.onclick = () => {
    subscription?.close();
    view = null;
    window.location.hash = "";
    document.getElementById("run-panel")!.classList.add("hidden");
    document.getElementById("form-panel")!.classList.remove("hidden");
  };
  document.getElementById("preset")!.addEventListener("change", (event) => {
    const custom = (event.target as HTMLSelectElement).value === "custom";
    document.getElementById("advanced")!.classList.toggle("hidden", !custom);
  });

  const fromHash = window.location.hash.replace("#", "");
  if (fromHash) openRun(fromHash, 0);
}
