/**
 * DOM wiring for the vetting UI.
 *
 * The API base URL comes from the ?api= query parameter and defaults to
 * the origin the page was served from. Keyboard: 1-4 relabel, b toggles
 * candidate boxes, r reloads after a conflict.
 */

import { HttpApiClient } from "./api.js";
import { labelForKey, ReviewSession } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  return fromQuery ?? window.location.origin;
}

export function startApp(): void {
  const session = new ReviewSession(new HttpApiClient(apiBase()), "ui");
  const queueCount = el<HTMLSpanElement>("queue-count");
  const image = el<HTMLImageElement>("example-image");
  const meta = el<HTMLDivElement>("example-meta");
  const votes = el<HTMLUListElement>("vote-list");
  const conflictBar = el<HTMLDivElement>("conflict");
  const statusLine = el<HTMLDivElement>("status-line");

  function render(): void {
    queueCount.textContent = String(session.queue.length);
    conflictBar.hidden = session.conflict === null;
    if (session.conflict) {
      conflictBar.textContent =
        `Someone else changed this example (now version ` +
        `${session.conflict.currentVersion}). Press r to reload; ` +
        `your decision was not applied.`;
    }
    const current = session.current;
    if (!current) {
      image.removeAttribute("src");
      meta.textContent = session.done ? "Queue empty. All examples reviewed." : "";
      votes.replaceChildren();
      return;
    }
    const url = session.imageUrl();
    if (url) image.src = url;
    meta.textContent =
      `${current.image_id} · version ${current.version} · ` +
      `${current.votes.length} votes · boxes ${session.showBoxes ? "on" : "off"}`;
    votes.replaceChildren(
      ...current.votes.map((v) => {
        const item = document.createElement("li");
        item.textContent = `${v.worker_id}: ${v.label} (${v.vote_time_s.toFixed(1)}s)`;
        return item;
      }),
    );
  }

  async function act(run: () => Promise<unknown>): Promise<void> {
    try {
      await run();
      statusLine.textContent = "";
    } catch (err) {
      statusLine.textContent = err instanceof Error ? err.message : String(err);
    }
    render();
  }

  document.addEventListener("keydown", (event) => {
    if (event.repeat) return;
    const label = labelForKey(event.key);
    if (label && session.current) {
      void act(() => session.relabel(label));
    } else if (event.key === "b") {
      session.toggleBoxes();
      render();
    } else if (event.key === "r") {
      void act(() => session.reloadCurrent());
    }
  });

  void act(() => session.loadQueue());
}

startApp();
