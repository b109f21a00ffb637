import { ApiClient, ApiError } from "./api.js";
import type { HistoryTurn } from "./api.js";
import type { SpeechPort } from "./speech.js";
import type { UiConfig, UiMessage, UiSessionState } from "./types.js";
import { ChatView } from "./view.js";

/**
 * Controller. The server owns the conversation; after every
 * successful exchange the view is rebuilt from GET history, so the
 * rendered list can never drift from what the service stored.
 */
export class ChatApp {
  state: UiSessionState = {
    sessionId: null,
    messages: [],
    pending: false,
    voiceEnabled: false,
  };

  // doc_id -> title, learned from query replies. History turns carry
  // only (doc_id, chunk_id) pairs.
  private titles = new Map<string, string>();
  private recognizer: { stop(): void } | null = null;

  constructor(
    private view: ChatView,
    private client: ApiClient,
    private speech: SpeechPort,
    private locale: string,
  ) {
    view.sendBtn.addEventListener("click", () => { void this.send(view.input.value); });
    view.input.addEventListener("keydown", (ev: KeyboardEvent) => {
      if (ev.key === "Enter") void this.send(view.input.value);
    });
    view.micBtn.addEventListener("click", () => this.micPressed());
    view.voiceToggle.addEventListener("click", () => this.toggleVoice());

    view.setMicVisible(speech.recognitionSupported());
    view.setVoiceToggleVisible(speech.synthesisSupported());
  }

  swapClient(client: ApiClient, locale: string): void {
    this.client = client;
    this.locale = locale;
    this.state.sessionId = null;
  }

  async ensureSession(): Promise<string> {
    if (!this.state.sessionId) {
      this.state.sessionId = await this.client.createSession();
    }
    return this.state.sessionId;
  }

  async send(text: string): Promise<void> {
    if (this.state.pending) return; // one in-flight query at a time
    const trimmed = text.trim();
    if (!trimmed) return;

    this.state.pending = true;
    this.view.setPending(true);
    this.view.clearError();
    try {
      const sid = await this.ensureSession();
      const reply = await this.client.query(sid, trimmed);
      for (const c of reply.citations) {
        if (c.title) this.titles.set(c.doc_id, c.title);
      }
      const turns = await this.client.getHistory(sid);
      this.reconcile(turns);
      this.view.clearInputValue();
      if (this.state.voiceEnabled) {
        this.speech.speak(reply.answer, this.locale);
      }
    } catch (e: any) {
      this.showFailure(e, trimmed);
    } finally {
      this.state.pending = false;
      this.view.setPending(false);
    }
  }

  /** Rebuild the view model from server history. */
  reconcile(turns: HistoryTurn[]): void {
    const msgs: UiMessage[] = turns.map((t) => ({
      role: t.role,
      text: t.text,
      citations: t.citations.map(([docId, chunkId]) => ({
        docId,
        chunkId,
        title: this.titles.get(docId) || "",
      })),
    }));
    this.state.messages = msgs;
    this.view.renderMessages(msgs);
  }

  private showFailure(e: unknown, queryText: string): void {
    const retry = () => { void this.send(queryText); };
    if (e instanceof ApiError && e.status === 401) {
      this.view.showError("check API key", retry);
    } else if (e instanceof ApiError) {
      this.view.showError(e.detail || e.code, retry);
    } else {
      this.view.showError(String((e as any)?.message || e), retry);
    }
  }

  toggleVoice(): void {
    this.state.voiceEnabled = !this.state.voiceEnabled;
    this.view.setVoiceOn(this.state.voiceEnabled);
    if (!this.state.voiceEnabled) this.speech.cancel();
  }

  // Transcript lands in the input box for the user to edit or
  // discard; dictation never sends on its own.
  micPressed(): void {
    if (this.recognizer) {
      this.recognizer.stop();
      this.recognizer = null;
      this.view.setMicActive(false);
      return;
    }
    const handle = this.speech.start(this.locale, {
      onTranscript: (t) => {
        this.view.input.value = t;
        this.recognizer = null;
        this.view.setMicActive(false);
      },
      onDenied: () => {
        this.recognizer = null;
        this.view.setMicActive(false);
        this.view.setMicDenied("microphone permission denied");
      },
      onError: () => {
        this.recognizer = null;
        this.view.setMicActive(false);
      },
    });
    if (handle) {
      this.recognizer = handle;
      this.view.setMicActive(true);
    }
  }
}

/**
 * Settings panel glue. The key field is write-only: never pre-filled,
 * cleared again on save, so the key itself has no DOM representation.
 */
export function wireSettings(
  view: ChatView,
  app: ChatApp,
  initial: UiConfig,
  makeClient: (cfg: UiConfig) => ApiClient,
  save: (cfg: UiConfig) => void,
): void {
  let cfg = initial;
  view.settingsBtn.addEventListener("click", () => {
    view.settingsPanel.hidden = !view.settingsPanel.hidden;
    view.apiUrl.value = cfg.baseUrl;
    view.localeInput.value = cfg.locale;
    view.apiKey.value = "";
    view.apiKey.placeholder = cfg.apiKey ? "saved" : "";
  });
  view.saveBtn.addEventListener("click", () => {
    cfg = {
      baseUrl: view.apiUrl.value.trim() || cfg.baseUrl,
      apiKey: view.apiKey.value.trim() || cfg.apiKey,
      locale: view.localeInput.value.trim() || cfg.locale,
    };
    save(cfg);
    view.apiKey.value = "";
    view.apiKey.placeholder = cfg.apiKey ? "saved" : "";
    view.settingsNote.textContent = "saved";
    app.swapClient(makeClient(cfg), cfg.locale);
  });
}
