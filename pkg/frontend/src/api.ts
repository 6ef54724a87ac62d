/** Thin typed client for the annotation service HTTP API. */

export interface Task {
  task_id: string;
  image_id: string;
  person_id: string;
  image_url: string;
  labels: string[];
  image_size: [number, number];
}

export interface ResponsePayload {
  worker_id: string;
  image_id: string;
  person_id: string;
  box: [number, number, number, number];
  label: string;
}

export interface StoredRecord extends ResponsePayload {
  response_id: string;
  created_at: string;
}

/** Non-2xx reply; `detail` carries the server's message verbatim. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

async function raiseForStatus(res: Response): Promise<void> {
  if (res.ok) {
    return;
  }
  let detail = res.statusText || `status ${res.status}`;
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") {
      detail = body.detail;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  readonly baseUrl: string;

  constructor(baseUrl = "") {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  async fetchTask(): Promise<Task> {
    const res = await fetch(`${this.baseUrl}/api/task`);
    await raiseForStatus(res);
    return (await res.json()) as Task;
  }

  async submitResponse(payload: ResponsePayload): Promise<StoredRecord> {
    const res = await fetch(`${this.baseUrl}/api/response`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    await raiseForStatus(res);
    return (await res.json()) as StoredRecord;
  }

  async fetchExport(): Promise<StoredRecord[]> {
    const res = await fetch(`${this.baseUrl}/api/export`);
    await raiseForStatus(res);
    const text = await res.text();
    return text
      .split("\n")
      .filter((line) => line.length > 0)
      .map((line) => JSON.parse(line) as StoredRecord);
  }

  imageUrl(task: Task): string {
    return `${this.baseUrl}${task.image_url}`;
  }
}
