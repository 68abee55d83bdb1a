/** Pure session state: which sample is up, what may be submitted, and the
 * guarantees the study design needs -- a rating can only be submitted after
 * playback started, exactly one score must be selected, and no
 * (participant, sample) pair is ever submitted twice. */

import type { SessionPayload } from "./api.js";

export const SCORES: readonly number[] = [1, 2, 3, 4, 5, 6, 7];

export interface PendingRating {
  sample: string;
  score: number;
}

export class SessionState {
  readonly participant: string;
  readonly samples: string[];
  private readonly submitted: Set<string>;
  private readonly played = new Set<string>();
  private selected: number | null = null;
  private inFlight: PendingRating | null = null;
  private cursor: number;

  constructor(payload: SessionPayload) {
    this.participant = payload.participant;
    this.samples = [...payload.samples];
    this.submitted = new Set(payload.rated);
    this.cursor = 0;
    this.advancePastSubmitted();
  }

  private advancePastSubmitted(): void {
    while (this.cursor < this.samples.length && this.submitted.has(this.samples[this.cursor])) {
      this.cursor += 1;
    }
  }

  current(): string | null {
    return this.cursor < this.samples.length ? this.samples[this.cursor] : null;
  }

  index(): number {
    return this.cursor;
  }

  progress(): { done: number; total: number } {
    return { done: this.submitted.size, total: this.samples.length };
  }

  isComplete(): boolean {
    return this.current() === null;
  }

  markPlaybackStarted(): void {
    const sample = this.current();
    if (sample !== null) {
      this.played.add(sample);
    }
  }

  playbackStarted(): boolean {
    const sample = this.current();
    return sample !== null && this.played.has(sample);
  }

  selectScore(score: number): void {
    if (!Number.isInteger(score) || score < 1 || score > 7) {
      throw new Error(`score must be an integer in [1, 7], got ${score}`);
    }
    this.selected = score;
  }

  selectedScore(): number | null {
    return this.selected;
  }

  canSubmit(): boolean {
    const sample = this.current();
    return (
      sample !== null &&
      this.inFlight === null &&
      this.selected !== null &&
      this.played.has(sample) &&
      !this.submitted.has(sample)
    );
  }

  /** Claim the current rating for submission; blocks double-sends. */
  beginSubmit(): PendingRating {
    if (!this.canSubmit()) {
      throw new Error("submission is not allowed in this state");
    }
    this.inFlight = { sample: this.current() as string, score: this.selected as number };
    return this.inFlight;
  }

  /** Resolve the in-flight submission.  Accepted (or duplicate) ratings
   * advance to the next sample; failures keep the selection for retry. */
  finishSubmit(accepted: boolean): void {
    if (this.inFlight === null) {
      throw new Error("no submission in flight");
    }
    const { sample } = this.inFlight;
    this.inFlight = null;
    if (!accepted) {
      return;
    }
    this.submitted.add(sample);
    this.selected = null;
    this.advancePastSubmitted();
  }
}
