/** Evaluation flow: fetch a task, render it, gate submission, repeat.
 *
 * Preference screens show exactly two players labeled "A" and "B" and the
 * three choices; answering is blocked until both clips have played to the
 * end. Transcription screens show one player and a free-text box; empty
 * submissions are blocked. System identities never reach this code: the
 * service's task payload is already blinded.
 */

import { ApiClient, NextReply, TaskView } from "./api.js";

export class EvaluationApp {
  private busy = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly campaignId: string,
    private readonly session: string,
  ) {}

  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    let reply: NextReply;
    try {
      reply = await this.api.nextTask(this.campaignId, this.session);
    } catch (err) {
      this.renderError(String(err), () => this.advance());
      return;
    }
    if (reply.done) {
      this.renderDone(reply.progress?.done ?? 0);
      return;
    }
    this.renderTask(reply.task!);
  }

  private async submit(task: TaskView, answer: string): Promise<void> {
    if (this.busy) {
      return;
    }
    this.busy = true;
    try {
      await this.api.submitResponse(task.task_id, answer);
    } catch (err) {
      this.busy = false;
      this.renderError(String(err), () => this.renderTask(task));
      return;
    }
    this.busy = false;
    await this.advance();
  }

  private renderTask(task: TaskView): void {
    this.root.replaceChildren();
    const screen = el("div", { class: "screen" });
    screen.append(
      el("p", { class: "progress" },
         `Clip ${task.progress.done + 1} of ${task.progress.total}`),
      el("p", { class: "instructions" }, task.instructions),
    );
    if (task.type === "preference") {
      this.renderPreference(screen, task);
    } else {
      this.renderTranscription(screen, task);
    }
    this.root.append(screen);
  }

  private renderPreference(screen: HTMLElement, task: TaskView): void {
    const played = { a: false, b: false };
    const buttons: HTMLButtonElement[] = [];

    const unlock = () => {
      if (played.a && played.b) {
        for (const button of buttons) {
          button.disabled = false;
        }
      }
    };

    for (const side of ["a", "b"] as const) {
      const block = el("div", { class: "player" });
      block.append(el("h2", {}, side.toUpperCase()));
      const audio = el("audio", {
        controls: "",
        src: task.audio[side]!,
        "data-side": side,
      }) as HTMLAudioElement;
      audio.addEventListener("ended", () => {
        played[side] = true;
        unlock();
      });
      block.append(audio);
      screen.append(block);
    }

    const answers = el("div", { class: "answers" });
    for (const label of ["A", "B", "No difference"]) {
      const button = el("button", { disabled: "" }, label) as HTMLButtonElement;
      button.addEventListener("click", () => void this.submit(task, label));
      buttons.push(button);
      answers.append(button);
    }
    screen.append(
      answers,
      el("p", { class: "hint" }, "Play both clips to the end to answer."),
    );
  }

  private renderTranscription(screen: HTMLElement, task: TaskView): void {
    const audio = el("audio", {
      controls: "",
      src: task.audio.single!,
      "data-side": "single",
    });
    const box = el("textarea", {
      class: "transcript",
      placeholder: "Type what you hear",
    }) as HTMLTextAreaElement;
    const button = el("button", { disabled: "" }, "Submit") as HTMLButtonElement;
    box.addEventListener("input", () => {
      button.disabled = box.value.trim().length === 0;
    });
    button.addEventListener("click", () => {
      const text = box.value;
      if (text.trim().length === 0) {
        return;
      }
      void this.submit(task, text);
    });
    screen.append(audio, box, button);
  }

  private renderDone(count: number): void {
    this.root.replaceChildren(
      el("div", { class: "screen done" },
         el("h1", {}, "All done"),
         el("p", {}, `Thank you! ${count} responses recorded.`)),
    );
  }

  private renderError(message: string, retry: () => void): void {
    const button = el("button", { class: "retry" }, "Retry");
    button.addEventListener("click", retry);
    this.root.replaceChildren(
      el("div", { class: "screen error" },
         el("p", {}, "Connection problem. Your progress is saved."),
         el("p", { class: "detail" }, message),
         button),
    );
  }
}

function el(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}
