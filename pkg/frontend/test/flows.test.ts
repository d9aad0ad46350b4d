/** Flow tests against an in-memory stand-in for the listening service,
 * faithful to its endpoint contracts: per-session item order, persisted
 * A/B presentation decided at first issue, first answer wins, done marker
 * after the last response. */

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { EvaluationApp } from "../src/app.js";
import { sessionId } from "../src/session.js";

const PREFERENCE_INSTRUCTIONS =
  "Listen to the two audio clips below and select the one you prefer.";

interface FakeItem {
  id: string;
  systems?: { label: string; audio: string }[];
  audio?: string;
}

class FakeService {
  tasks = new Map<string, Record<string, string>>();
  responses: { task_id: string; answer: string }[] = [];

  constructor(
    readonly campaignId: string,
    readonly type: "preference" | "transcription",
    readonly items: FakeItem[],
    readonly instructions: string,
  ) {}

  private answered(session: string): Set<string> {
    const done = new Set<string>();
    for (const response of this.responses) {
      const task = this.tasks.get(response.task_id);
      if (task && task.session === session) {
        done.add(task.item_id);
      }
    }
    return done;
  }

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = new URL(String(input), "http://service");
    if (url.pathname.endsWith("/next")) {
      const session = url.searchParams.get("session")!;
      const done = this.answered(session);
      const item = this.items.find((candidate) => !done.has(candidate.id));
      if (!item) {
        return json({ done: true, progress: { done: done.size, total: this.items.length } });
      }
      const taskId = `${this.campaignId}:${session}:${item.id}`;
      if (!this.tasks.has(taskId)) {
        // Alternate which system plays as "A" between items.
        const side = this.items.indexOf(item) % 2;
        const record: Record<string, string> = {
          task_id: taskId,
          session,
          item_id: item.id,
        };
        if (this.type === "preference") {
          record.a_system = item.systems![side].label;
          record.b_system = item.systems![1 - side].label;
          record.a_audio = item.systems![side].audio;
          record.b_audio = item.systems![1 - side].audio;
        }
        this.tasks.set(taskId, record);
      }
      const record = this.tasks.get(taskId)!;
      const audio =
        this.type === "preference"
          ? { a: `/audio/${record.a_audio}`, b: `/audio/${record.b_audio}` }
          : { single: `/audio/${item.audio}` };
      return json({
        done: false,
        task: {
          task_id: taskId,
          campaign_id: this.campaignId,
          item_id: item.id,
          type: this.type,
          instructions: this.instructions,
          audio,
          progress: { done: done.size, total: this.items.length },
        },
      });
    }
    if (url.pathname.endsWith("/responses")) {
      const body = JSON.parse(String(init!.body));
      if (!this.tasks.has(body.task_id)) {
        return json({ detail: "unknown task" }, 404);
      }
      if (this.responses.some((r) => r.task_id === body.task_id)) {
        return json({ detail: "duplicate" }, 409);
      }
      this.responses.push({ task_id: body.task_id, answer: body.answer });
      return json({ status: "stored" });
    }
    return json({ detail: "no route" }, 404);
  };

  tallyBySystem(): Record<string, number> {
    const counts: Record<string, number> = {};
    for (const response of this.responses) {
      const task = this.tasks.get(response.task_id)!;
      if (response.answer === "No difference") {
        counts.same = (counts.same ?? 0) + 1;
        continue;
      }
      const system = response.answer === "A" ? task.a_system : task.b_system;
      counts[system] = (counts[system] ?? 0) + 1;
    }
    return counts;
  }
}

function json(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function preferenceService(): FakeService {
  return new FakeService(
    "pref",
    "preference",
    [1, 2, 3].map((i) => ({
      id: `item${i}`,
      systems: [
        { label: "found", audio: `f${i}.wav` },
        { label: "created", audio: `c${i}.wav` },
      ],
    })),
    PREFERENCE_INSTRUCTIONS,
  );
}

function transcriptionService(): FakeService {
  return new FakeService(
    "trans",
    "transcription",
    [1, 2, 3].map((i) => ({ id: `item${i}`, audio: `t${i}.wav` })),
    "Listen to the audio clip and type what you hear.",
  );
}

function playBoth(root: HTMLElement): void {
  for (const audio of root.querySelectorAll("audio")) {
    audio.dispatchEvent(new Event("ended"));
  }
}

function answerButtons(root: HTMLElement): HTMLButtonElement[] {
  return [...root.querySelectorAll<HTMLButtonElement>(".answers button")];
}

async function settle(): Promise<void> {
  // Drain the microtask queue a few times so fetch->render chains finish.
  for (let i = 0; i < 8; i++) {
    await Promise.resolve();
  }
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app")!;
  window.localStorage.clear();
});

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("preference flow", () => {
  it("completes a 3-item campaign and the tally matches the choices", async () => {
    const service = preferenceService();
    vi.stubGlobal("fetch", service.fetch);
    const app = new EvaluationApp(root, new ApiClient(""), "pref", "eval-1");
    await app.start();
    await settle();

    // The evaluator prefers the clip playing as "A" twice, then hears no
    // difference; presentation alternates underneath.
    const picks = ["A", "A", "No difference"];
    const expected: Record<string, number> = {};
    for (const pick of picks) {
      playBoth(root);
      const buttons = answerButtons(root);
      const button = buttons.find((b) => b.textContent === pick)!;
      if (pick !== "No difference") {
        const taskId = [...service.tasks.keys()].at(-1)!;
        const record = service.tasks.get(taskId)!;
        const system = pick === "A" ? record.a_system : record.b_system;
        expected[system] = (expected[system] ?? 0) + 1;
      } else {
        expected.same = (expected.same ?? 0) + 1;
      }
      button.click();
      await settle();
    }

    expect(service.responses).toHaveLength(3);
    expect(service.tallyBySystem()).toEqual(expected);
    expect(root.textContent).toContain("All done");
  });

  it("renders the preference instruction text exactly", async () => {
    const service = preferenceService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-2").start();
    await settle();
    expect(root.querySelector(".instructions")!.textContent).toBe(
      PREFERENCE_INSTRUCTIONS,
    );
  });

  it("blocks submission until both clips have played", async () => {
    const service = preferenceService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-3").start();
    await settle();

    const buttons = answerButtons(root);
    expect(buttons).toHaveLength(3);
    expect(buttons.every((b) => b.disabled)).toBe(true);

    // Clicking a disabled button must not post anything.
    buttons[0].click();
    await settle();
    expect(service.responses).toHaveLength(0);

    // One clip is not enough.
    root.querySelector('audio[data-side="a"]')!.dispatchEvent(new Event("ended"));
    expect(answerButtons(root).every((b) => b.disabled)).toBe(true);

    root.querySelector('audio[data-side="b"]')!.dispatchEvent(new Event("ended"));
    expect(answerButtons(root).every((b) => !b.disabled)).toBe(true);
  });

  it("labels the two players exactly A and B and never leaks system names", async () => {
    const service = preferenceService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-4").start();
    await settle();

    const headings = [...root.querySelectorAll(".player h2")].map(
      (h) => h.textContent,
    );
    expect(headings).toEqual(["A", "B"]);
    const markup = root.innerHTML;
    expect(markup).not.toContain("found");
    expect(markup).not.toContain("created");
  });

  it("re-renders the same task after a reload mid-task", async () => {
    const service = preferenceService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-5").start();
    await settle();
    const firstSources = [...root.querySelectorAll("audio")].map((a) =>
      a.getAttribute("src"),
    );

    // Simulate a reload: fresh app instance, same session, same service.
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app")!;
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-5").start();
    await settle();
    const secondSources = [...root.querySelectorAll("audio")].map((a) =>
      a.getAttribute("src"),
    );
    expect(secondSources).toEqual(firstSources);
    expect(service.tasks.size).toBe(1);
  });

  it("shows progress from the service", async () => {
    const service = preferenceService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-6").start();
    await settle();
    expect(root.querySelector(".progress")!.textContent).toBe("Clip 1 of 3");
    playBoth(root);
    answerButtons(root)[0].click();
    await settle();
    expect(root.querySelector(".progress")!.textContent).toBe("Clip 2 of 3");
  });

  it("offers a retry that preserves state after a network failure", async () => {
    const service = preferenceService();
    let failNext = true;
    vi.stubGlobal("fetch", (input: RequestInfo | URL, init?: RequestInit) => {
      if (failNext) {
        failNext = false;
        return Promise.reject(new TypeError("network down"));
      }
      return service.fetch(input, init);
    });
    await new EvaluationApp(root, new ApiClient(""), "pref", "eval-7").start();
    await settle();
    expect(root.textContent).toContain("Connection problem");

    (root.querySelector("button.retry") as HTMLButtonElement).click();
    await settle();
    expect(root.querySelectorAll("audio")).toHaveLength(2);
  });
});

describe("transcription flow", () => {
  it("completes a 3-item campaign with text passed through verbatim", async () => {
    const service = transcriptionService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "trans", "eval-1").start();
    await settle();

    const texts = ["kawuono ni", "ẹkọ́ dára", "dwe"];
    for (const text of texts) {
      const box = root.querySelector("textarea") as HTMLTextAreaElement;
      box.value = text;
      box.dispatchEvent(new Event("input"));
      (root.querySelector("button") as HTMLButtonElement).click();
      await settle();
    }
    expect(service.responses.map((r) => r.answer)).toEqual(texts);
    expect(root.textContent).toContain("All done");
  });

  it("blocks empty submissions", async () => {
    const service = transcriptionService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "trans", "eval-2").start();
    await settle();

    const button = root.querySelector("button") as HTMLButtonElement;
    expect(button.disabled).toBe(true);
    button.click();
    await settle();
    expect(service.responses).toHaveLength(0);

    const box = root.querySelector("textarea") as HTMLTextAreaElement;
    box.value = "   ";
    box.dispatchEvent(new Event("input"));
    expect((root.querySelector("button") as HTMLButtonElement).disabled).toBe(true);

    box.value = "habari";
    box.dispatchEvent(new Event("input"));
    expect((root.querySelector("button") as HTMLButtonElement).disabled).toBe(false);
  });

  it("never shows reference text", async () => {
    const service = transcriptionService();
    vi.stubGlobal("fetch", service.fetch);
    await new EvaluationApp(root, new ApiClient(""), "trans", "eval-3").start();
    await settle();
    expect(root.querySelectorAll("audio")).toHaveLength(1);
    expect(root.querySelector("textarea")).not.toBeNull();
  });
});

describe("session identity", () => {
  it("generates once and persists in storage", () => {
    const first = sessionId(window.localStorage);
    const second = sessionId(window.localStorage);
    expect(first).toBe(second);
    expect(first.length).toBeGreaterThan(8);
  });
});
