// DOM rendering and event wiring. The view is rebuilt from the session
// resource after every server response; no state lives in the DOM.

import type { SessionResource } from "./api.js";
import { ApiError, confirmChoice, getSession, translate } from "./api.js";
import { previewText, progressLabel, relativeShares, slotViews } from "./state.js";

export interface AppContext {
  root: HTMLElement;
  session: SessionResource;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

async function refresh(ctx: AppContext): Promise<void> {
  ctx.session = await getSession(ctx.session.id);
  renderSession(ctx);
}

async function onPick(
  ctx: AppContext,
  position: number,
  token: string,
  override: boolean,
): Promise<void> {
  try {
    ctx.session = await confirmChoice(ctx.session.id, position, token, override);
    renderSession(ctx);
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // another tab got there first; the server's state wins
      await refresh(ctx);
      showBanner(ctx.root, `conflict: ${err.message}; session reloaded`);
    } else {
      showBanner(ctx.root, `request failed: ${(err as Error).message}`);
    }
  }
}

export function showBanner(root: HTMLElement, message: string): void {
  let banner = root.querySelector<HTMLElement>(".banner");
  if (!banner) {
    banner = el("div", "banner");
    root.prepend(banner);
  }
  banner.textContent = message;
}

function renderSlot(ctx: AppContext, slot: ReturnType<typeof slotViews>[number]): HTMLElement {
  const panel = el("section", "slot");
  panel.dataset.position = String(slot.position);

  const heading = el("h3", "slot-title", `slot @ ${slot.position}`);
  panel.append(heading);

  if (slot.confirmedToken !== null) {
    panel.classList.add("confirmed");
    const chosen = el("div", "chosen", slot.confirmedToken);
    if (slot.overridden) chosen.classList.add("override");
    panel.append(chosen);
    return panel;
  }

  const list = el("ol", "candidates");
  const shares = relativeShares(slot.candidates);
  slot.candidates.forEach((cand, i) => {
    const item = el("li", "candidate");
    item.dataset.rank = String(cand.rank);
    const button = el("button", "pick", cand.token);
    button.addEventListener("click", () => {
      void onPick(ctx, slot.position, cand.token, false);
    });
    const bar = el("span", "bar");
    bar.style.width = `${Math.round(shares[i] * 100)}%`;
    const share = el("span", "share", `${(shares[i] * 100).toFixed(1)}% of top-${slot.candidates.length}`);
    item.append(button, bar, share);
    list.append(item);
  });
  panel.append(list);

  const form = el("div", "override-entry");
  const input = el("input") as HTMLInputElement;
  input.maxLength = 1;
  input.placeholder = "other";
  const submit = el("button", "override-submit", "use override");
  submit.addEventListener("click", () => {
    if (input.value) void onPick(ctx, slot.position, input.value, true);
  });
  form.append(input, submit);
  panel.append(form);
  return panel;
}

export function renderSession(ctx: AppContext): void {
  const { root, session } = ctx;
  root.textContent = "";

  const header = el("header");
  header.append(el("h2", "session-id", `session ${session.id}`));
  header.append(el("div", "progress", progressLabel(session)));
  header.append(el("div", "checkpoint", `model ${session.checkpoint_id}`));
  root.append(header);

  const preview = el("div", "preview", previewText(session));
  root.append(preview);

  const slots = el("main", "slots");
  for (const slot of slotViews(session)) slots.append(renderSlot(ctx, slot));
  root.append(slots);

  if (session.completed && session.restored_text) {
    const done = el("div", "restored", session.restored_text);
    root.append(done);
    const translateBtn = el("button", "translate", "translate restored text");
    const output = el("div", "translation");
    translateBtn.addEventListener("click", () => {
      void translate(session.restored_text as string)
        .then((result) => {
          output.textContent = `${result.hypothesis} (score ${result.score.toFixed(3)})`;
        })
        .catch((err: Error) => showBanner(root, `translation failed: ${err.message}`));
    });
    root.append(translateBtn, output);
  }
}

export async function mount(root: HTMLElement, sessionId: string): Promise<AppContext> {
  const session = await getSession(sessionId);
  const ctx: AppContext = { root, session };
  renderSession(ctx);
  return ctx;
}
