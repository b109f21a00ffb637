// Browser-native speech in and out. Capability checks gate the UI:
// controls for a missing interface are hidden, not greyed out.

export interface RecognizerHandlers {
  onTranscript(text: string): void;
  onDenied(): void;
  onError(message: string): void;
}

export interface SpeechPort {
  recognitionSupported(): boolean;
  synthesisSupported(): boolean;
  start(locale: string, handlers: RecognizerHandlers): { stop(): void } | null;
  speak(text: string, locale: string): void;
  cancel(): void;
}

export function recognitionSupported(w: any = window): boolean {
  return Boolean(w && (w.SpeechRecognition || w.webkitSpeechRecognition));
}

export function synthesisSupported(w: any = window): boolean {
  return Boolean(w && w.speechSynthesis && w.SpeechSynthesisUtterance);
}

/**
 * Drop a trailing sources footer so it is never spoken. Cited titles
 * belong on screen, not in the audio channel.
 */
export function stripSourcesFooter(text: string): string {
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    if (/^\s*sources:?\s*$/i.test(lines[i] ?? "")) {
      return lines.slice(0, i).join("\n").replace(/\s+$/, "");
    }
  }
  return text;
}

export function startRecognition(
  locale: string,
  handlers: RecognizerHandlers,
  w: any = window,
): { stop(): void } | null {
  const SR = w.SpeechRecognition || w.webkitSpeechRecognition;
  if (!SR) return null;
  const rec = new SR();
  rec.lang = locale;
  rec.interimResults = false;
  rec.maxAlternatives = 1;
  rec.onresult = (ev: any) => {
    const t = ev?.results?.[0]?.[0]?.transcript;
    if (typeof t === "string" && t.trim()) handlers.onTranscript(t.trim());
  };
  rec.onerror = (ev: any) => {
    const code = ev?.error || "unknown";
    if (code === "not-allowed" || code === "service-not-allowed") {
      handlers.onDenied();
    } else {
      handlers.onError(String(code));
    }
  };
  try {
    rec.start();
  } catch (e: any) {
    handlers.onError(String(e?.message || e));
    return null;
  }
  return { stop: () => { try { rec.stop(); } catch { /* already stopped */ } } };
}

export function speak(text: string, locale: string, w: any = window): void {
  if (!synthesisSupported(w)) return;
  const u = new w.SpeechSynthesisUtterance(stripSourcesFooter(text));
  u.lang = locale;
  try { w.speechSynthesis.cancel(); } catch { /* nothing playing */ }
  w.speechSynthesis.speak(u);
}

export function stopSpeaking(w: any = window): void {
  if (!synthesisSupported(w)) return;
  try { w.speechSynthesis.cancel(); } catch { /* nothing playing */ }
}

export function browserSpeech(w: any = window): SpeechPort {
  return {
    recognitionSupported: () => recognitionSupported(w),
    synthesisSupported: () => synthesisSupported(w),
    start: (locale, handlers) => startRecognition(locale, handlers, w),
    speak: (text, locale) => speak(text, locale, w),
    cancel: () => stopSpeaking(w),
  };
}
