/** HIT session state: selections, local persistence, idempotent submission.
 *
 * The opening sentence is not a constructible choice: option lists start at
 * index 2, and setSelection refuses index 1 outright. Submission is keyed by
 * (worker, document); acknowledged documents are never re-posted, and a
 * duplicate rejection on resend counts as already recorded.
 */

import type { ApiClient } from "./api.js";
import type { Choice, HitView, SubmitOutcome } from "./types.js";

export interface ChoiceOption {
  value: Choice;
  label: string;
}

/** One option per non-opening sentence plus "None of the above". */
export function sentenceOptions(sentences: string[]): ChoiceOption[] {
  const options: ChoiceOption[] = [];
  for (let index = 2; index <= sentences.length; index++) {
    options.push({ value: index, label: `Sentence ${index}` });
  }
  options.push({ value: "NONE", label: "None of the above" });
  return options;
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

interface PersistedSession {
  selections: Record<string, Choice>;
  acknowledged: string[];
}

export class HitSession {
  private selections = new Map<string, Choice>();
  private acknowledged = new Set<string>();
  private errors = new Map<string, string>();

  constructor(
    readonly hit: HitView,
    readonly workerId: string,
    private readonly storage: StorageLike | null = null,
  ) {
    this.restore();
  }

  private get storageKey(): string {
    return `annotation:${this.workerId}:${this.hit.hit_id}`;
  }

  private restore(): void {
    if (!this.storage) return;
    const raw = this.storage.getItem(this.storageKey);
    if (!raw) return;
    try {
      const saved = JSON.parse(raw) as PersistedSession;
      const known = new Set(this.hit.documents.map((d) => d.document_id));
      for (const [docId, choice] of Object.entries(saved.selections ?? {})) {
        if (known.has(docId) && choice !== 1) {
          this.selections.set(docId, choice);
        }
      }
      for (const docId of saved.acknowledged ?? []) {
        if (known.has(docId)) {
          this.acknowledged.add(docId);
        }
      }
    } catch {
      this.storage.removeItem(this.storageKey);
    }
  }

  private persist(): void {
    if (!this.storage) return;
    const payload: PersistedSession = {
      selections: Object.fromEntries(this.selections),
      acknowledged: [...this.acknowledged],
    };
    this.storage.setItem(this.storageKey, JSON.stringify(payload));
  }

  setSelection(documentId: string, choice: Choice): void {
    if (choice === 1) {
      throw new Error("the opening sentence is not selectable");
    }
    const doc = this.hit.documents.find((d) => d.document_id === documentId);
    if (!doc) {
      throw new Error(`unknown document ${documentId}`);
    }
    if (choice !== "NONE" && (!Number.isInteger(choice) || choice < 2 || choice > doc.sentences.length)) {
      throw new Error(`choice ${choice} out of range for ${documentId}`);
    }
    this.selections.set(documentId, choice);
    this.errors.delete(documentId);
    this.persist();
  }

  getSelection(documentId: string): Choice | undefined {
    return this.selections.get(documentId);
  }

  isAcknowledged(documentId: string): boolean {
    return this.acknowledged.has(documentId);
  }

  errorFor(documentId: string): string | undefined {
    return this.errors.get(documentId);
  }

  /** Submit is enabled only once every document has a selection. */
  get complete(): boolean {
    return this.hit.documents.every((d) => this.selections.has(d.document_id));
  }

  get allAcknowledged(): boolean {
    return this.hit.documents.every((d) => this.acknowledged.has(d.document_id));
  }

  buildRequest(documentId: string) {
    const choice = this.selections.get(documentId);
    if (choice === undefined) {
      throw new Error(`no selection for ${documentId}`);
    }
    return {
      hit_id: this.hit.hit_id,
      document_id: documentId,
      worker_id: this.workerId,
      choice,
    };
  }

  /** Post every pending selection; acknowledged documents are skipped so a
   *  retry after a network drop never duplicates an accepted annotation. */
  async submitAll(api: ApiClient): Promise<SubmitOutcome[]> {
    if (!this.complete) {
      throw new Error("all documents need an answer before submitting");
    }
    const outcomes: SubmitOutcome[] = [];
    for (const doc of this.hit.documents) {
      const docId = doc.document_id;
      if (this.acknowledged.has(docId)) {
        outcomes.push({ document_id: docId, status: "accepted" });
        continue;
      }
      let outcome: SubmitOutcome;
      try {
        const result = await api.postAnnotation(this.buildRequest(docId));
        if (result.ok) {
          outcome = { document_id: docId, status: "accepted" };
          this.acknowledged.add(docId);
        } else if (result.status === 409) {
          // already recorded server-side: an ack we lost, not a new vote
          outcome = { document_id: docId, status: "duplicate" };
          this.acknowledged.add(docId);
        } else {
          outcome = { document_id: docId, status: "rejected", detail: result.detail };
          this.errors.set(docId, result.detail ?? `HTTP ${result.status}`);
        }
      } catch (err) {
        outcome = {
          document_id: docId,
          status: "network-error",
          detail: err instanceof Error ? err.message : String(err),
        };
        this.errors.set(docId, outcome.detail ?? "network error");
      }
      outcomes.push(outcome);
    }
    this.persist();
    return outcomes;
  }

  /** Drop local state once the whole HIT went through. */
  clear(): void {
    if (this.storage) {
      this.storage.removeItem(this.storageKey);
    }
  }
}
