import type { UiConfig } from "./types.js";

// Session storage only. The key must never reach localStorage, URLs,
// or anything else that survives the tab.
const URL_SLOT = "fieldrag.baseUrl";
const KEY_SLOT = "fieldrag.apiKey";
const LOCALE_SLOT = "fieldrag.locale";

export const DEFAULT_BASE_URL = "http://127.0.0.1:8000";
export const DEFAULT_LOCALE = "en-US";

export function loadConfig(storage: Storage = window.sessionStorage): UiConfig {
  return {
    baseUrl: storage.getItem(URL_SLOT) || DEFAULT_BASE_URL,
    apiKey: storage.getItem(KEY_SLOT) || "",
    locale: storage.getItem(LOCALE_SLOT) || DEFAULT_LOCALE,
  };
}

export function saveConfig(cfg: UiConfig, storage: Storage = window.sessionStorage): void {
  storage.setItem(URL_SLOT, cfg.baseUrl);
  storage.setItem(KEY_SLOT, cfg.apiKey);
  storage.setItem(LOCALE_SLOT, cfg.locale);
}
