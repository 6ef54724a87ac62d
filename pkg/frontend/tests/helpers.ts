import type { Task } from "../src/api.js";

/** In-memory Storage so tests never share worker ids. */
export class MemoryStorage implements Storage {
  private map = new Map<string, string>();

  get length(): number {
    return this.map.size;
  }

  clear(): void {
    this.map.clear();
  }

  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }

  key(index: number): string | null {
    return Array.from(this.map.keys())[index] ?? null;
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }

  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
}

export const CANONICAL_LABELS = [
  "beard",
  "cheek",
  "chin",
  "ears",
  "eyes",
  "eye brows",
  "hairline",
  "laugh line",
  "lips",
  "moustache",
  "nose",
];

export function makeTask(overrides: Partial<Task> = {}): Task {
  return {
    task_id: "t0",
    image_id: "alice_front",
    person_id: "alice",
    image_url: "/images/alice_front.png",
    labels: [...CANONICAL_LABELS],
    image_size: [16, 16],
    ...overrides,
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** Fire a mouse event with display-space client coordinates. */
export function mouse(
  target: EventTarget,
  type: string,
  x: number,
  y: number,
): void {
  target.dispatchEvent(
    new MouseEvent(type, { bubbles: true, clientX: x, clientY: y }),
  );
}

/** mousedown on `stage`, mousemove and mouseup on window. */
export function drag(
  stage: Element,
  from: [number, number],
  to: [number, number],
): void {
  mouse(stage, "mousedown", from[0], from[1]);
  mouse(window, "mousemove", to[0], to[1]);
  mouse(window, "mouseup", to[0], to[1]);
}
