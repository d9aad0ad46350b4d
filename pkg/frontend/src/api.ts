/** Typed client for the listening-test service HTTP API. */

export interface Progress {
  done: number;
  total: number;
}

export interface TaskView {
  task_id: string;
  campaign_id: string;
  item_id: string;
  type: "preference" | "transcription";
  instructions: string;
  audio: { a?: string; b?: string; single?: string };
  progress: Progress;
}

export interface NextReply {
  done: boolean;
  task?: TaskView;
  progress?: Progress;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  async nextTask(campaignId: string, session: string): Promise<NextReply> {
    const url =
      `${this.baseUrl}/campaigns/${encodeURIComponent(campaignId)}/next` +
      `?session=${encodeURIComponent(session)}`;
    const reply = await fetch(url);
    if (!reply.ok) {
      throw new ApiError(`next task failed (${reply.status})`, reply.status);
    }
    return (await reply.json()) as NextReply;
  }

  async submitResponse(taskId: string, answer: string): Promise<void> {
    const reply = await fetch(`${this.baseUrl}/responses`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ task_id: taskId, answer }),
    });
    // 409 means this task was already answered (e.g. a double click or a
    // reload race); the flow simply moves on to the next task.
    if (!reply.ok && reply.status !== 409) {
      throw new ApiError(`submit failed (${reply.status})`, reply.status);
    }
  }
}
