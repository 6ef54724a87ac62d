import { describe, expect, it } from "vitest";

import { STORAGE_KEY, getWorkerId } from "../src/worker-id.js";
import { MemoryStorage } from "./helpers.js";

describe("getWorkerId", () => {
  it("mints a 32-hex-char id and persists it", () => {
    const storage = new MemoryStorage();
    const id = getWorkerId(storage);
    expect(id).toMatch(/^[0-9a-f]{32}$/);
    expect(storage.getItem(STORAGE_KEY)).toBe(id);
  });

  it("returns the same id on every call", () => {
    const storage = new MemoryStorage();
    const first = getWorkerId(storage);
    expect(getWorkerId(storage)).toBe(first);
    expect(getWorkerId(storage)).toBe(first);
  });

  it("respects a previously stored id", () => {
    const storage = new MemoryStorage();
    storage.setItem(STORAGE_KEY, "cafe0000cafe0000cafe0000cafe0000");
    expect(getWorkerId(storage)).toBe("cafe0000cafe0000cafe0000cafe0000");
  });

  it("mints distinct ids for distinct browsers", () => {
    expect(getWorkerId(new MemoryStorage())).not.toBe(
      getWorkerId(new MemoryStorage()),
    );
  });
});
