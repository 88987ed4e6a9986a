/** Entry point: rater sign-in, then the annotation queue, then results. */

import { ApiClient } from "./api.js";
import { AnnotationSession } from "./session.js";
import { GroupView, ResultsView } from "./views.js";

const api = new ApiClient("");

function signIn(root: HTMLElement): void {
  root.replaceChildren();
  const h = document.createElement("h2");
  h.textContent = "Worst-viewpoint study";
  const p = document.createElement("p");
  p.className = "muted";
  p.textContent =
    "Enter a rater id to begin or resume. Completed selections are stored " +
    "on the server; reloading the page resumes where you left off.";
  const input = document.createElement("input");
  input.placeholder = "rater id (letters, digits, _ . -)";
  input.id = "rater-id";
  const go = document.createElement("button");
  go.className = "primary";
  go.textContent = "Start";
  const err = document.createElement("p");
  err.className = "banner hidden";

  const start = async () => {
    try {
      const session = new AnnotationSession(api, input.value.trim());
      await session.load();
      run(root, session);
    } catch (e) {
      err.textContent = String(e instanceof Error ? e.message : e);
      err.classList.remove("hidden");
    }
  };
  go.addEventListener("click", () => void start());
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void start();
  });
  root.append(h, p, input, go, err);
  input.focus();
}

function run(root: HTMLElement, session: AnnotationSession): void {
  const results = () => void new ResultsView(root, api).render();
  if (session.finished()) {
    results();
    return;
  }
  new GroupView(root, api, session, results).mount();
}

window.addEventListener("load", () => {
  const root = document.getElementById("app");
  if (root) signIn(root);
});
