/**
 * Review session state machine, independent of the DOM.
 *
 * Holds the ambiguous-example queue, the currently open example, and the
 * box-overlay toggle. A decision against a stale record version never
 * goes through silently: the session stores the conflict and the caller
 * must reload before deciding again.
 */

import {
  ApiClient,
  DecisionAction,
  ExampleDetail,
  RecordStatus,
  TextLabel,
  VersionConflictError,
} from "./api.js";

export interface Conflict {
  imageId: string;
  message: string;
  currentVersion: number;
}

/** Keyboard shortcuts: digits 1-4 pick the four labels in fixed order. */
export function labelForKey(key: string): TextLabel | null {
  switch (key) {
    case "1":
      return "Overlaying";
    case "2":
      return "Organic";
    case "3":
      return "Both";
    case "4":
      return "None";
    default:
      return null;
  }
}

export class ReviewSession {
  private readonly client: ApiClient;
  private readonly status: RecordStatus;
  reviewer: string;

  queue: string[] = [];
  current: ExampleDetail | null = null;
  showBoxes = false;
  conflict: Conflict | null = null;

  constructor(client: ApiClient, reviewer = "", status: RecordStatus = "ambiguous") {
    this.client = client;
    this.status = status;
    this.reviewer = reviewer;
  }

  /** Fetch every queue page and open the first example, if any. */
  async loadQueue(): Promise<void> {
    const ids: string[] = [];
    let page = 1;
    for (;;) {
      const result = await this.client.listExamples(this.status, page, 100);
      for (const item of result.items) ids.push(item.image_id);
      if (ids.length >= result.total || result.items.length === 0) break;
      page += 1;
    }
    this.queue = ids;
    this.conflict = null;
    this.current = null;
    if (ids.length > 0) await this.open(ids[0]!);
  }

  get done(): boolean {
    return this.queue.length === 0;
  }

  async open(imageId: string): Promise<void> {
    this.current = await this.client.getExample(imageId);
    this.conflict = null;
  }

  /** Re-fetch the open example; clears a pending conflict. */
  async reloadCurrent(): Promise<void> {
    if (this.current) await this.open(this.current.image_id);
  }

  toggleBoxes(): boolean {
    this.showBoxes = !this.showBoxes;
    return this.showBoxes;
  }

  imageUrl(): string | null {
    if (!this.current) return null;
    return this.client.imageUrl(this.current.image_id, this.showBoxes);
  }

  /**
   * Apply a decision to the open example at the version on screen.
   *
   * On success the example leaves the queue and the next one opens. On a
   * version conflict the queue is untouched, the conflict is recorded,
   * and the example stays open for the caller to reload.
   */
  async decide(action: DecisionAction, label?: TextLabel): Promise<boolean> {
    if (!this.current) throw new Error("no example is open");
    if (this.conflict) {
      throw new Error("resolve the version conflict before deciding again");
    }
    const imageId = this.current.image_id;
    try {
      await this.client.postDecision(imageId, {
        action,
        label,
        reviewer: this.reviewer,
        prior_version: this.current.version,
      });
    } catch (err) {
      if (err instanceof VersionConflictError) {
        this.conflict = {
          imageId,
          message: err.message,
          currentVersion: err.currentVersion,
        };
        return false;
      }
      throw err;
    }
    await this.advanceFrom(imageId);
    return true;
  }

  relabel(label: TextLabel): Promise<boolean> {
    return this.decide("relabel", label);
  }

  private async advanceFrom(imageId: string): Promise<void> {
    const at = this.queue.indexOf(imageId);
    if (at >= 0) this.queue.splice(at, 1);
    const next = this.queue[Math.min(at < 0 ? 0 : at, this.queue.length - 1)];
    if (next !== undefined) {
      await this.open(next);
    } else {
      this.current = null;
    }
  }
}
