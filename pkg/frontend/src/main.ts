// Entry point: open the session named in the URL hash (#<session-id>) or
// create one from the damaged-text form.

import { createSession } from "./api.js";
import { mount, showBanner } from "./render.js";

function rootElement(): HTMLElement {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  return root;
}

async function boot(): Promise<void> {
  const root = rootElement();
  const sessionId = window.location.hash.slice(1);
  if (sessionId) {
    try {
      await mount(root, sessionId);
    } catch (err) {
      showBanner(root, `could not load session: ${(err as Error).message}`);
    }
    return;
  }

  const form = document.createElement("div");
  form.className = "new-session";
  const input = document.createElement("input");
  input.placeholder = "damaged text with □ marks";
  input.className = "damaged-text";
  const button = document.createElement("button");
  button.textContent = "start review";
  button.addEventListener("click", () => {
    void createSession(input.value)
      .then((session) => {
        window.location.hash = session.id;
        return mount(root, session.id);
      })
      .catch((err: Error) => showBanner(root, `could not create session: ${err.message}`));
  });
  form.append(input, button);
  root.append(form);
}

void boot();
