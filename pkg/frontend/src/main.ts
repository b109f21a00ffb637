import { ApiClient } from "./api.js";
import { ChatApp, wireSettings } from "./app.js";
import { loadConfig, saveConfig } from "./config.js";
import { browserSpeech } from "./speech.js";
import { mount } from "./view.js";

const root = document.getElementById("app");
if (root) {
  const view = mount(root);
  const cfg = loadConfig();
  const app = new ChatApp(view, new ApiClient(cfg), browserSpeech(), cfg.locale);
  wireSettings(view, app, cfg, (c) => new ApiClient(c), saveConfig);
}
