import { describe, expect, it, vi } from "vitest";
import {
  recognitionSupported,
  speak,
  startRecognition,
  stopSpeaking,
  stripSourcesFooter,
  synthesisSupported,
} from "../src/speech.js";

class FakeRecognition {
  static last: FakeRecognition | null = null;
  lang = "";
  interimResults = true;
  maxAlternatives = 0;
  started = false;
  stopped = false;
  onresult: ((ev: any) => void) | null = null;
  onerror: ((ev: any) => void) | null = null;
  constructor() {
    FakeRecognition.last = this;
  }
  start() { this.started = true; }
  stop() { this.stopped = true; }
}

class FakeUtterance {
  lang = "";
  constructor(public text: string) {}
}

function fakeSynthWindow() {
  const calls: { spoken: string[]; cancels: number } = { spoken: [], cancels: 0 };
  const w = {
    SpeechSynthesisUtterance: FakeUtterance,
    speechSynthesis: {
      speak: (u: FakeUtterance) => calls.spoken.push(u.text),
      cancel: () => { calls.cancels++; },
    },
  };
  return { w, calls };
}

describe("capability detection", () => {
  it("detects prefixed and unprefixed recognition", () => {
    expect(recognitionSupported({})).toBe(false);
    expect(recognitionSupported({ SpeechRecognition: FakeRecognition })).toBe(true);
    expect(recognitionSupported({ webkitSpeechRecognition: FakeRecognition })).toBe(true);
  });

  it("requires both synthesis pieces", () => {
    expect(synthesisSupported({})).toBe(false);
    expect(synthesisSupported({ speechSynthesis: {} })).toBe(false);
    expect(
      synthesisSupported({ speechSynthesis: {}, SpeechSynthesisUtterance: FakeUtterance }),
    ).toBe(true);
  });

  it("jsdom exposes neither speech interface", () => {
    expect(recognitionSupported(window)).toBe(false);
    expect(synthesisSupported(window)).toBe(false);
  });
});

describe("stripSourcesFooter", () => {
  it("drops the footer block", () => {
    const text = "Tighten to 42 Nm.\nSources:\n  d1:c00001 (Arm manual)";
    expect(stripSourcesFooter(text)).toBe("Tighten to 42 Nm.");
  });

  it("handles the footer without a colon and mixed case", () => {
    expect(stripSourcesFooter("Answer.\nSOURCES\nd1:c1")).toBe("Answer.");
  });

  it("leaves footer-free text alone", () => {
    expect(stripSourcesFooter("The word sources: appears inline.")).toBe(
      "The word sources: appears inline.",
    );
  });
});

describe("startRecognition", () => {
  it("delivers a trimmed transcript", () => {
    FakeRecognition.last = null;
    const onTranscript = vi.fn();
    const handle = startRecognition(
      "en-GB",
      { onTranscript, onDenied: vi.fn(), onError: vi.fn() },
      { SpeechRecognition: FakeRecognition },
    );
    const rec = FakeRecognition.last!;
    expect(handle).not.toBeNull();
    expect(rec.started).toBe(true);
    expect(rec.lang).toBe("en-GB");
    rec.onresult!({ results: [[{ transcript: "  check pump pressure  " }]] });
    expect(onTranscript).toHaveBeenCalledWith("check pump pressure");
  });

  it("routes permission denial separately from other errors", () => {
    const onDenied = vi.fn();
    const onError = vi.fn();
    startRecognition(
      "en-US",
      { onTranscript: vi.fn(), onDenied, onError },
      { webkitSpeechRecognition: FakeRecognition },
    );
    FakeRecognition.last!.onerror!({ error: "not-allowed" });
    expect(onDenied).toHaveBeenCalledTimes(1);
    expect(onError).not.toHaveBeenCalled();

    startRecognition(
      "en-US",
      { onTranscript: vi.fn(), onDenied, onError },
      { webkitSpeechRecognition: FakeRecognition },
    );
    FakeRecognition.last!.onerror!({ error: "no-speech" });
    expect(onError).toHaveBeenCalledWith("no-speech");
  });

  it("returns null on unsupported windows", () => {
    const handle = startRecognition(
      "en-US",
      { onTranscript: vi.fn(), onDenied: vi.fn(), onError: vi.fn() },
      {},
    );
    expect(handle).toBeNull();
  });
});

describe("speak / stopSpeaking", () => {
  it("cancels queued speech before speaking and strips the footer", () => {
    const { w, calls } = fakeSynthWindow();
    speak("Answer text.\nSources:\nd1:c1 (Manual)", "en-US", w);
    expect(calls.cancels).toBe(1);
    expect(calls.spoken).toEqual(["Answer text."]);
  });

  it("stopSpeaking cancels playback", () => {
    const { w, calls } = fakeSynthWindow();
    stopSpeaking(w);
    expect(calls.cancels).toBe(1);
  });

  it("is a silent no-op without synthesis", () => {
    speak("hello", "en-US", {});
    stopSpeaking({});
  });
});
