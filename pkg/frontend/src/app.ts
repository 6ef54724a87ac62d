/**
 * Annotation page: fetch a task, let the worker drag a box over the face
 * image, pick one of the server's labels or type a custom one, and submit.
 * Exactly one task is active and at most one submission is in flight at any
 * time. Box coordinates are kept and transmitted in source-image pixel
 * space; display scaling never leaks into the payload.
 */

import { ApiClient, ApiError, type Task } from "./api.js";
import {
  boxToArray,
  displayScale,
  dragToBox,
  toDisplayCoord,
  type Box,
} from "./geometry.js";
import { getWorkerId } from "./worker-id.js";

export const INSTRUCTION =
  "Draw a bounding box around the most recognizable and differentiating " +
  "facial feature for this individual and label the selected region.";

/** Sentinel option value that reveals the free-text label field. */
export const CUSTOM_VALUE = "__custom__";

export interface AppOptions {
  baseUrl?: string;
  /** Widest the image may render, in display pixels. */
  maxWidth?: number;
  storage?: Storage;
}

interface Point {
  x: number;
  y: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}

export class AnnotatorApp {
  readonly client: ApiClient;
  readonly workerId: string;
  readonly maxWidth: number;

  task: Task | null = null;
  box: Box | null = null;
  scale = 1;
  busy = false;

  private dragStart: Point | null = null;

  private readonly root: HTMLElement;
  private readonly stage: HTMLDivElement;
  private readonly image: HTMLImageElement;
  private readonly outline: HTMLDivElement;
  private readonly select: HTMLSelectElement;
  private readonly customInput: HTMLInputElement;
  private readonly submitButton: HTMLButtonElement;
  private readonly retryButton: HTMLButtonElement;
  private readonly status: HTMLParagraphElement;

  private readonly onWindowMove = (ev: MouseEvent) => this.handleMove(ev);
  private readonly onWindowUp = (ev: MouseEvent) => this.handleUp(ev);

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.client = new ApiClient(options.baseUrl ?? "");
    this.maxWidth = options.maxWidth ?? 512;
    this.workerId = getWorkerId(options.storage ?? globalThis.localStorage);

    const instruction = el("p", "instruction");
    instruction.textContent = INSTRUCTION;

    this.stage = el("div", "stage");
    this.image = el("img", "photo");
    this.image.alt = "face to annotate";
    this.image.draggable = false;
    this.outline = el("div", "box-outline");
    this.outline.hidden = true;
    this.stage.append(this.image, this.outline);

    this.select = el("select", "label-select");
    this.customInput = el("input", "custom-label");
    this.customInput.type = "text";
    this.customInput.placeholder = "your own label";
    this.customInput.hidden = true;
    this.submitButton = el("button", "submit");
    this.submitButton.type = "button";
    this.submitButton.textContent = "Submit";
    this.submitButton.disabled = true;
    const controls = el("div", "controls");
    controls.append(this.select, this.customInput, this.submitButton);

    this.status = el("p", "status");
    this.retryButton = el("button", "retry");
    this.retryButton.type = "button";
    this.retryButton.textContent = "Retry";
    this.retryButton.hidden = true;

    root.append(instruction, this.stage, controls, this.status, this.retryButton);

    this.stage.addEventListener("mousedown", (ev) => this.handleDown(ev));
    window.addEventListener("mousemove", this.onWindowMove);
    window.addEventListener("mouseup", this.onWindowUp);
    this.select.addEventListener("change", () => {
      this.customInput.hidden = this.select.value !== CUSTOM_VALUE;
      this.refresh();
    });
    this.customInput.addEventListener("input", () => this.refresh());
    this.submitButton.addEventListener("click", () => void this.submit());
    this.retryButton.addEventListener("click", () => void this.loadTask());
  }

  destroy(): void {
    window.removeEventListener("mousemove", this.onWindowMove);
    window.removeEventListener("mouseup", this.onWindowUp);
  }

  labelValue(): string {
    const v = this.select.value;
    return v === CUSTOM_VALUE ? this.customInput.value.trim() : v;
  }

  async loadTask(): Promise<void> {
    this.status.textContent = "Loading task...";
    this.retryButton.hidden = true;
    this.root.classList.remove("error");
    try {
      const task = await this.client.fetchTask();
      this.task = task;
      this.box = null;
      this.dragStart = null;
      const [width, height] = task.image_size;
      this.scale = displayScale(width, this.maxWidth);
      this.image.src = this.client.imageUrl(task);
      this.image.style.width = `${toDisplayCoord(width, this.scale)}px`;
      this.image.style.height = `${toDisplayCoord(height, this.scale)}px`;
      this.stage.style.width = this.image.style.width;
      this.stage.style.height = this.image.style.height;
      this.populateLabels(task.labels);
      this.status.textContent = "";
    } catch {
      this.task = null;
      this.box = null;
      this.root.classList.add("error");
      this.status.textContent = "Could not reach the annotation service.";
      this.retryButton.hidden = false;
    }
    this.updateOutline();
    this.refresh();
  }

  async submit(): Promise<void> {
    const label = this.labelValue();
    if (this.busy || !this.task || !this.box || !label) {
      return;
    }
    this.busy = true;
    this.refresh();
    try {
      await this.client.submitResponse({
        worker_id: this.workerId,
        image_id: this.task.image_id,
        person_id: this.task.person_id,
        box: boxToArray(this.box),
        label,
      });
      this.box = null;
      this.updateOutline();
      this.busy = false;
      await this.loadTask();
      return;
    } catch (err) {
      // keep the drawn box so the worker can correct and resubmit
      this.status.textContent =
        err instanceof ApiError ? err.detail : "Submission failed; try again.";
    }
    this.busy = false;
    this.refresh();
  }

  private populateLabels(labels: string[]): void {
    const current = Array.from(this.select.options, (o) => o.value);
    const wanted = [...labels, CUSTOM_VALUE];
    if (current.length === wanted.length && current.every((v, i) => v === wanted[i])) {
      return;
    }
    const selected = this.select.value;
    this.select.textContent = "";
    for (const label of labels) {
      const option = document.createElement("option");
      option.value = label;
      option.textContent = label;
      this.select.append(option);
    }
    const custom = document.createElement("option");
    custom.value = CUSTOM_VALUE;
    custom.textContent = "custom label...";
    this.select.append(custom);
    this.select.value = selected;
    if (this.select.value !== selected || selected === "") {
      // no carried-over choice: force an explicit pick
      this.select.selectedIndex = -1;
      this.customInput.hidden = true;
    }
  }

  private stagePoint(ev: MouseEvent): Point {
    const rect = this.stage.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  }

  private handleDown(ev: MouseEvent): void {
    if (!this.task || this.busy) {
      return;
    }
    ev.preventDefault();
    this.dragStart = this.stagePoint(ev);
    this.applyDrag(this.dragStart);
  }

  private handleMove(ev: MouseEvent): void {
    if (this.dragStart) {
      this.applyDrag(this.stagePoint(ev));
    }
  }

  private handleUp(ev: MouseEvent): void {
    if (this.dragStart) {
      this.applyDrag(this.stagePoint(ev));
      this.dragStart = null;
    }
  }

  private applyDrag(point: Point): void {
    if (!this.dragStart || !this.task) {
      return;
    }
    const [width, height] = this.task.image_size;
    this.box = dragToBox(this.dragStart, point, this.scale, { width, height });
    this.updateOutline();
    this.refresh();
  }

  private updateOutline(): void {
    if (!this.box) {
      this.outline.hidden = true;
      return;
    }
    const { x0, y0, x1, y1 } = this.box;
    this.outline.hidden = false;
    this.outline.style.left = `${toDisplayCoord(x0, this.scale)}px`;
    this.outline.style.top = `${toDisplayCoord(y0, this.scale)}px`;
    this.outline.style.width = `${toDisplayCoord(x1 - x0, this.scale)}px`;
    this.outline.style.height = `${toDisplayCoord(y1 - y0, this.scale)}px`;
  }

  private refresh(): void {
    this.submitButton.disabled =
      this.busy || !this.task || !this.box || !this.labelValue();
  }
}

/** Mount the annotator into `root` and kick off the first task fetch. */
export function createApp(root: HTMLElement, options: AppOptions = {}): AnnotatorApp {
  const app = new AnnotatorApp(root, options);
  void app.loadTask();
  return app;
}
