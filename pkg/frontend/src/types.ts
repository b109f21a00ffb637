export interface Citation {
  docId: string;
  chunkId: string;
  /** Learned from query replies; history turns carry only the id pair. */
  title: string;
}

export interface UiMessage {
  role: "user" | "assistant";
  text: string;
  citations: Citation[];
}

/** View model. Everything durable lives server-side; this is the in-flight state. */
export interface UiSessionState {
  sessionId: string | null;
  messages: UiMessage[];
  pending: boolean;
  voiceEnabled: boolean;
}

export interface UiConfig {
  baseUrl: string;
  apiKey: string;
  locale: string;
}
