import type { UiMessage } from "./types.js";

// Single source of markup: index.html mounts this into #app, tests
// mount it into the jsdom body. All text lands via textContent, so
// nothing from the server is ever parsed as HTML.
export const APP_HTML = `
  <header class="bar">
    <span class="brand">fieldrag chat</span>
    <button id="voice-toggle" type="button" aria-pressed="false" hidden>voice: off</button>
    <button id="settings-btn" type="button">settings</button>
  </header>
  <section id="settings-panel" hidden>
    <label>server <input id="api-url" type="text" autocomplete="off"></label>
    <label>API key <input id="api-key" type="password" autocomplete="off"></label>
    <label>voice locale <input id="locale" type="text" autocomplete="off"></label>
    <button id="save-settings" type="button">save</button>
    <span id="settings-note" role="status"></span>
  </section>
  <main>
    <ol id="messages" aria-live="polite"></ol>
    <div id="error-slot"></div>
  </main>
  <footer class="bar">
    <button id="mic-btn" type="button" aria-label="dictate" hidden>mic</button>
    <span id="mic-tip" role="tooltip" hidden></span>
    <input id="query-input" type="text" autocomplete="off" placeholder="ask about a machine...">
    <button id="send-btn" type="button">send</button>
  </footer>
`;

export function mount(root: HTMLElement): ChatView {
  root.innerHTML = APP_HTML;
  return new ChatView(root);
}

function must<T extends HTMLElement>(root: HTMLElement, sel: string): T {
  const el = root.querySelector<T>(sel);
  if (!el) throw new Error("missing element " + sel);
  return el;
}

export class ChatView {
  readonly messages: HTMLOListElement;
  readonly input: HTMLInputElement;
  readonly sendBtn: HTMLButtonElement;
  readonly micBtn: HTMLButtonElement;
  readonly micTip: HTMLElement;
  readonly voiceToggle: HTMLButtonElement;
  readonly errorSlot: HTMLElement;
  readonly settingsPanel: HTMLElement;
  readonly settingsBtn: HTMLButtonElement;
  readonly apiUrl: HTMLInputElement;
  readonly apiKey: HTMLInputElement;
  readonly localeInput: HTMLInputElement;
  readonly saveBtn: HTMLButtonElement;
  readonly settingsNote: HTMLElement;

  constructor(root: HTMLElement) {
    this.messages = must(root, "#messages");
    this.input = must(root, "#query-input");
    this.sendBtn = must(root, "#send-btn");
    this.micBtn = must(root, "#mic-btn");
    this.micTip = must(root, "#mic-tip");
    this.voiceToggle = must(root, "#voice-toggle");
    this.errorSlot = must(root, "#error-slot");
    this.settingsPanel = must(root, "#settings-panel");
    this.settingsBtn = must(root, "#settings-btn");
    this.apiUrl = must(root, "#api-url");
    this.apiKey = must(root, "#api-key");
    this.localeInput = must(root, "#locale");
    this.saveBtn = must(root, "#save-settings");
    this.settingsNote = must(root, "#settings-note");
  }

  /** Rebuild the list from the reconciled state. */
  renderMessages(msgs: UiMessage[]): void {
    this.messages.replaceChildren();
    for (const m of msgs) {
      const li = document.createElement("li");
      li.className = "bubble " + m.role;
      const body = document.createElement("p");
      body.textContent = m.text;
      li.appendChild(body);
      if (m.citations.length > 0) {
        const list = document.createElement("ul");
        list.className = "sources";
        for (const c of m.citations) {
          const item = document.createElement("li");
          const ref = c.docId + ":" + c.chunkId;
          item.textContent = c.title ? c.title + " (" + ref + ")" : ref;
          list.appendChild(item);
        }
        li.appendChild(list);
      }
      this.messages.appendChild(li);
    }
  }

  showError(text: string, onRetry?: () => void): void {
    this.clearError();
    const box = document.createElement("div");
    box.className = "bubble error";
    const body = document.createElement("p");
    body.textContent = text;
    box.appendChild(body);
    if (onRetry) {
      const btn = document.createElement("button");
      btn.type = "button";
      btn.textContent = "retry";
      btn.addEventListener("click", () => onRetry());
      box.appendChild(btn);
    }
    this.errorSlot.appendChild(box);
  }

  clearError(): void {
    this.errorSlot.replaceChildren();
  }

  setPending(pending: boolean): void {
    this.input.disabled = pending;
    this.sendBtn.disabled = pending;
  }

  setMicVisible(visible: boolean): void {
    this.micBtn.hidden = !visible;
  }

  setVoiceToggleVisible(visible: boolean): void {
    this.voiceToggle.hidden = !visible;
  }

  setVoiceOn(on: boolean): void {
    this.voiceToggle.setAttribute("aria-pressed", on ? "true" : "false");
    this.voiceToggle.textContent = on ? "voice: on" : "voice: off";
  }

  // stays until the page reloads; denial is not transient
  setMicDenied(tip: string): void {
    this.micBtn.disabled = true;
    this.micTip.textContent = tip;
    this.micTip.hidden = false;
  }

  setMicActive(active: boolean): void {
    this.micBtn.classList.toggle("listening", active);
  }

  clearInputValue(): void {
    this.input.value = "";
  }
}
