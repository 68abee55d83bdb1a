/** DOM wiring for the listening test: play a sample, collect one 1-7
 * human-likeness score, submit it live, advance.  The participant never
 * sees which system produced a clip -- only opaque sample ids are used. */

import { ApiClient } from "./api.js";
import { SCORES, SessionState } from "./session.js";

const PARTICIPANT_KEY = "prowave.participant";

export interface AppOptions {
  api?: ApiClient;
  storage?: Pick<Storage, "getItem" | "setItem" | "removeItem">;
  document?: Document;
}

export class ListeningApp {
  private readonly api: ApiClient;
  private readonly storage: AppOptions["storage"];
  private readonly doc: Document;
  private state: SessionState | null = null;

  constructor(private readonly root: HTMLElement, options: AppOptions = {}) {
    this.api = options.api ?? new ApiClient();
    this.storage = options.storage ?? window.localStorage;
    this.doc = options.document ?? root.ownerDocument;
  }

  async start(): Promise<void> {
    this.renderMessage("Loading session…");
    const stored = this.storage?.getItem(PARTICIPANT_KEY) ?? undefined;
    try {
      const payload = await this.api.session(stored || undefined);
      this.storage?.setItem(PARTICIPANT_KEY, payload.participant);
      this.state = new SessionState(payload);
    } catch (err) {
      this.renderRetry(`Could not reach the rating service (${String(err)}).`);
      return;
    }
    this.render();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K, attrs: Record<string, string> = {}, text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    for (const [k, v] of Object.entries(attrs)) {
      node.setAttribute(k, v);
    }
    if (text !== undefined) {
      node.textContent = text;
    }
    return node;
  }

  private renderMessage(text: string): void {
    this.root.replaceChildren(this.el("p", { class: "status" }, text));
  }

  private renderRetry(text: string): void {
    const box = this.el("div", { class: "status error" });
    box.appendChild(this.el("p", {}, text));
    const retry = this.el("button", { id: "retry" }, "Retry");
    retry.addEventListener("click", () => void this.start());
    box.appendChild(retry);
    this.root.replaceChildren(box);
  }

  private render(): void {
    const state = this.state;
    if (state === null) {
      return;
    }
    if (state.isComplete()) {
      this.renderComplete();
      return;
    }
    const sample = state.current() as string;
    const { done, total } = state.progress();

    const screen = this.el("div", { class: "screen" });
    screen.appendChild(this.el("h1", {}, "How human-like does this sound?"));
    screen.appendChild(this.el("p", { id: "progress" },
                               `Sample ${done + 1} of ${total}`));

    const audio = this.el("audio", {
      id: "player", controls: "", preload: "auto", src: this.api.sampleUrl(sample),
    });
    audio.addEventListener("play", () => {
      state.markPlaybackStarted();
      this.syncControls();
    });
    screen.appendChild(audio);

    const form = this.el("fieldset", { id: "scale" });
    form.appendChild(this.el("legend", {},
                             "Rate from 1 (not human) to 7 (human)"));
    for (const score of SCORES) {
      const label = this.el("label", { class: "score" });
      const input = this.el("input", {
        type: "radio", name: "score", value: String(score), id: `score-${score}`,
      }) as HTMLInputElement;
      input.addEventListener("change", () => {
        state.selectScore(score);
        this.syncControls();
      });
      label.appendChild(input);
      let text = String(score);
      if (score === 1) {
        text += " — not human";
      } else if (score === 7) {
        text += " — human";
      }
      label.appendChild(this.el("span", {}, text));
      form.appendChild(label);
    }
    screen.appendChild(form);

    const submit = this.el("button", { id: "submit", disabled: "" }, "Submit rating");
    submit.addEventListener("click", () => void this.submit());
    screen.appendChild(submit);
    screen.appendChild(this.el("p", { id: "hint", class: "hint" },
                               "Listen to the sample before rating."));
    screen.appendChild(this.el("p", { id: "inline-error", class: "error" }));
    this.root.replaceChildren(screen);
  }

  private syncControls(): void {
    const state = this.state;
    if (state === null) {
      return;
    }
    const submit = this.root.querySelector("#submit") as HTMLButtonElement | null;
    if (submit !== null) {
      submit.disabled = !state.canSubmit();
    }
    const hint = this.root.querySelector("#hint");
    if (hint !== null) {
      hint.textContent = state.playbackStarted()
        ? (state.selectedScore() === null ? "Pick a score from 1 to 7." : "")
        : "Listen to the sample before rating.";
    }
  }

  private async submit(): Promise<void> {
    const state = this.state;
    if (state === null || !state.canSubmit()) {
      return;
    }
    const pending = state.beginSubmit();
    this.syncControls();
    let outcome;
    try {
      outcome = await this.api.submitRating(state.participant, pending.sample, pending.score);
    } catch (err) {
      state.finishSubmit(false);
      this.showInlineError(`Network error, rating kept: ${String(err)}`);
      this.syncControls();
      return;
    }
    if (outcome.ok || outcome.duplicate) {
      state.finishSubmit(true);
      this.render();
    } else {
      state.finishSubmit(false);
      this.showInlineError(outcome.error ?? `Rejected with status ${outcome.status}.`);
      this.syncControls();
    }
  }

  private showInlineError(text: string): void {
    const box = this.root.querySelector("#inline-error");
    if (box !== null) {
      box.textContent = text;
    }
  }

  private renderComplete(): void {
    const screen = this.el("div", { class: "screen", id: "complete" });
    screen.appendChild(this.el("h1", {}, "All done — thank you!"));
    screen.appendChild(this.el("p", {},
                               "Every sample you were assigned has been rated."));
    const form = this.el("div", { id: "demographics" });
    form.appendChild(this.el("p", {},
                             "Optionally, you may share your age and gender:"));
    form.appendChild(this.el("input", { id: "demo-age", placeholder: "age",
                                        inputmode: "numeric" }));
    form.appendChild(this.el("input", { id: "demo-gender", placeholder: "gender" }));
    const send = this.el("button", { id: "demo-send" }, "Share");
    send.addEventListener("click", () => {
      const age = (this.root.querySelector("#demo-age") as HTMLInputElement | null)?.value ?? "";
      const gender = (this.root.querySelector("#demo-gender") as HTMLInputElement | null)?.value ?? "";
      void this.api.submitMetadata(this.state?.participant ?? "", { age, gender });
      form.replaceChildren(this.el("p", {}, "Thanks for sharing."));
    });
    const skip = this.el("button", { id: "demo-skip" }, "Skip");
    skip.addEventListener("click", () => {
      form.replaceChildren();
    });
    form.appendChild(send);
    form.appendChild(skip);
    screen.appendChild(form);
    this.root.replaceChildren(screen);
  }
}

export function mount(root: HTMLElement, options: AppOptions = {}): ListeningApp {
  const app = new ListeningApp(root, options);
  void app.start();
  return app;
}
