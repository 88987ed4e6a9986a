/** Client-side annotation session: queue, resume, and submit-once logic.
 *
 * The server is the record of truth. On load the session fetches all
 * groups plus this rater's stored selections and resumes at the first
 * unanswered group. A failed submit is kept locally and retried until the
 * server acknowledges; a group can be confirmed at most once.
 */

import { ApiClient, ApiError, Group } from "./api.js";

export interface PendingSubmit {
  groupId: string;
  worstIndex: number;
}

export class AnnotationSession {
  groups: Group[] = [];
  answered = new Map<string, number>();
  pending: PendingSubmit | null = null;
  private cursor = 0;
  private loaded = false;

  constructor(readonly api: ApiClient, readonly raterId: string) {
    if (!/^[A-Za-z0-9_.-]+$/.test(raterId)) {
      throw new Error("rater id must be letters, digits, '_', '.' or '-'");
    }
  }

  async load(): Promise<void> {
    this.groups = await this.api.groups();
    const stored = await this.api.selections(this.raterId);
    this.answered = new Map(Object.entries(stored));
    this.cursor = 0;
    this.advancePastAnswered();
    this.loaded = true;
  }

  private advancePastAnswered(): void {
    while (
      this.cursor < this.groups.length &&
      this.answered.has(this.groups[this.cursor].group_id)
    ) {
      this.cursor++;
    }
  }

  /** The group awaiting a selection, or null when the queue is done. */
  current(): Group | null {
    if (!this.loaded) {
      throw new Error("session not loaded");
    }
    return this.cursor < this.groups.length ? this.groups[this.cursor] : null;
  }

  isAnswered(groupId: string): boolean {
    return this.answered.has(groupId);
  }

  progress(): { done: number; total: number } {
    return { done: this.answered.size, total: this.groups.length };
  }

  finished(): boolean {
    return this.current() === null && this.pending === null;
  }

  /**
   * Confirm the canonical candidate index for the current group. Returns
   * true when the server acknowledged; on network failure the selection is
   * kept in `pending` for retry and false is returned. Re-confirming an
   * already-answered group throws.
   */
  async submit(worstIndex: number): Promise<boolean> {
    const group = this.current();
    if (group === null) {
      throw new Error("no group awaiting a selection");
    }
    if (this.answered.has(group.group_id)) {
      throw new Error(`group ${group.group_id} already answered`);
    }
    this.pending = { groupId: group.group_id, worstIndex };
    return this.retryPending();
  }

  /** Retry the held-back selection after a network failure. */
  async retryPending(): Promise<boolean> {
    if (this.pending === null) {
      return true;
    }
    const { groupId, worstIndex } = this.pending;
    try {
      await this.api.submitSelection(groupId, this.raterId, worstIndex);
    } catch (err) {
      if (err instanceof ApiError) {
        return false; // selection stays pending
      }
      throw err;
    }
    this.answered.set(groupId, worstIndex);
    this.pending = null;
    this.advancePastAnswered();
    return true;
  }
}
