import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { PanelStore } from "../src/store.js";
import { makeFakeService } from "./fake_service.js";

function makeStore(options: Parameters<typeof makeFakeService>[0] = {}) {
  const { fetch, log } = makeFakeService(options);
  const api = new ApiClient("http://fake", fetch);
  return { store: new PanelStore(api), log };
}

async function flush(): Promise<void> {
  // drain microtasks queued by resolved fetches
  for (let i = 0; i < 20; i++) await Promise.resolve();
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("base submission", () => {
  it("renders the service probability to exactly 3 decimals (10 scripted panels)", async () => {
    // ten scripted probabilities incl. awkward rounding cases
    const values = [
      0.05, 0.1234994, 0.1235005, 0.5, 0.4999995, 0.822512, 0.0004999, 0.9999994, 0.6665, 0.333499,
    ];
    for (const p of values) {
      const { store } = makeStore({ probability: () => p });
      await store.submit();
      await flush();
      expect(store.view).not.toBeNull();
      expect(store.view!.probabilityText).toBe(p.toFixed(3));
    }
  });

  it("keeps every displayed number sourced from the response", async () => {
    const { store } = makeStore({ probability: () => 0.73 });
    await store.submit();
    await flush();
    expect(store.view!.label).toBe("BACTERIA");
    expect(store.view!.modelId).toBe("VB_FAKE_1");
    expect(store.view!.bars.length).toBe(store.transmittedMeasurements().length);
  });

  it("orders contribution bars by absolute phi", async () => {
    const { store } = makeStore();
    await store.submit();
    await flush();
    const magnitudes = store.view!.bars.map((b) => Math.abs(b.phi));
    expect(magnitudes).toEqual([...magnitudes].sort((a, b) => b - a));
  });

  it("blocks submission while the form is invalid", async () => {
    const { store, log } = makeStore();
    store.setField("crp", null);
    await store.submit();
    await flush();
    expect(log.predictCalls.length).toBe(0);
    expect(store.fieldErrors.get("crp")).toMatch(/required/);
  });
});

describe("band banner", () => {
  it("toggles exactly at CRP 10 and 40 mg/L", async () => {
    for (const [crp, expected] of [
      [10, true],
      [40, true],
      [9.999, false],
      [40.001, false],
      [25, true],
    ] as const) {
      const { store } = makeStore();
      store.setField("crp", crp);
      await store.submit();
      await flush();
      expect(store.view!.bandBanner).toBe(expected);
    }
  });

  it("follows the canonical value when entered in mg/dL", async () => {
    const { store } = makeStore();
    store.setUnit("crp", "mg/dL");
    store.setField("crp", 1.0); // 10 mg/L: inside the band
    await store.submit();
    await flush();
    expect(store.view!.bandBanner).toBe(true);
  });
});

describe("unit selector", () => {
  it("round trip mg/dL <-> mg/L leaves the transmitted value identical", () => {
    const { store } = makeStore();
    store.setField("crp", 23);
    const before = store.transmittedMeasurements().find((m) => m.name === "crp")!;
    const canonicalBefore = store.canonicalValue("crp");

    store.setUnit("crp", "mg/dL");
    expect(store.displayValue("crp")).toBeCloseTo(2.3, 12);
    const mid = store.transmittedMeasurements().find((m) => m.name === "crp")!;
    expect(mid).toEqual(before); // display-only change

    store.setUnit("crp", "mg/L");
    const after = store.transmittedMeasurements().find((m) => m.name === "crp")!;
    expect(after).toEqual(before);
    expect(store.displayValue("crp")).toBe(23);
    expect(store.canonicalValue("crp")).toBe(canonicalBefore);
  });

  it("records edits in the unit selected at edit time", () => {
    const { store } = makeStore();
    store.setUnit("crp", "mg/dL");
    store.setField("crp", 2.3);
    const sent = store.transmittedMeasurements().find((m) => m.name === "crp")!;
    expect(sent).toEqual({ name: "crp", value: 2.3, unit: "mg/dL" });
    expect(store.canonicalValue("crp")).toBeCloseTo(23, 12);
  });
});

describe("what-if updates", () => {
  it("debounces rapid edits into a single request pair", async () => {
    const { store, log } = makeStore();
    await store.submit();
    await flush();
    expect(log.predictCalls.length).toBe(1);

    store.setField("crp", 30);
    vi.advanceTimersByTime(120);
    store.setField("crp", 35);
    vi.advanceTimersByTime(120);
    store.setField("crp", 38);
    vi.advanceTimersByTime(299);
    await flush();
    expect(log.predictCalls.length).toBe(1); // still debouncing
    vi.advanceTimersByTime(1);
    await flush();
    expect(log.predictCalls.length).toBe(2);
    expect(log.predictCalls[1].measurements.find((m) => m.name === "crp")!.value).toBe(38);
    expect(log.maxInFlight).toBe(1);
  });

  it("shows a delta badge against the base submission", async () => {
    const { store } = makeStore();
    store.setField("crp", 20);
    await store.submit();
    await flush();
    expect(store.deltaText).toBe("+0.000");

    store.setField("crp", 60);
    vi.advanceTimersByTime(300);
    await flush();
    expect(store.delta).not.toBeNull();
    expect(store.delta!).toBeGreaterThan(0);
    expect(store.deltaText).toMatch(/^\+0\./);
  });

  it("no-op edit gives delta 0.000", async () => {
    const { store } = makeStore();
    store.setField("crp", 20);
    await store.submit();
    await flush();
    store.setField("crp", 20);
    vi.advanceTimersByTime(300);
    await flush();
    expect(store.deltaText).toBe("+0.000");
  });

  it("revert to base values reproduces the base view", async () => {
    const { store } = makeStore();
    store.setField("crp", 20);
    await store.submit();
    await flush();
    const base = structuredClone(store.baseView);

    store.setField("crp", 80);
    vi.advanceTimersByTime(300);
    await flush();
    expect(store.view).not.toEqual(base);

    store.setField("crp", 20);
    vi.advanceTimersByTime(300);
    await flush();
    expect(store.view).toEqual(base);
    expect(store.delta).toBe(0);
  });

  it("supersedes a slow in-flight result with the queued latest edit", async () => {
    const delayed: Array<() => void> = [];
    const { store, log } = makeStore({ delayed });
    // base submission: release its two responses as they arrive
    const basePromise = store.submit();
    for (let i = 0; i < 4; i++) {
      await flush();
      while (delayed.length) delayed.shift()!();
    }
    await basePromise;
    expect(store.view).not.toBeNull();

    // first edit fires a query whose responses hang
    store.setField("crp", 60);
    vi.advanceTimersByTime(300);
    await flush();
    expect(log.inFlight).toBe(1);

    // second edit must queue (never two pairs in flight); once the slow
    // pair resolves, the queued query for the latest values runs
    store.setField("crp", 5);
    vi.advanceTimersByTime(300);
    await flush();
    expect(log.maxInFlight).toBe(1);
    for (let i = 0; i < 10; i++) {
      while (delayed.length) delayed.shift()!();
      await flush();
    }
    expect(log.predictCalls.length).toBe(3); // base, crp=60, crp=5
    const lastSent = log.predictCalls[2].measurements.find((m) => m.name === "crp")!;
    expect(lastSent.value).toBe(5);
    expect(store.view!.bandBanner).toBe(false); // reflects the final query
    expect(log.maxInFlight).toBe(1);
  });
});

describe("error handling", () => {
  it("renders server 422 messages per field", async () => {
    const { store } = makeStore({
      failWith: { status: 422, detail: [{ field: "crp", message: "crp ≥ 0" }] },
    });
    await store.submit();
    await flush();
    expect(store.phase).toBe("error");
    expect(store.fieldErrors.get("crp")).toBe("crp ≥ 0");
  });

  it("network failure exposes a retry affordance", async () => {
    const { store } = makeStore({ failWith: "network" });
    await store.submit();
    await flush();
    expect(store.phase).toBe("error");
    expect(store.networkError).toMatch(/network failure/);
  });
});
