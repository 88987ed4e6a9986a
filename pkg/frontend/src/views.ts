/** DOM rendering for the two screens: group annotation and results. */

import { ApiClient, CiReport, Group } from "./api.js";
import { AnnotationSession } from "./session.js";
import { deshuffle, displayOrder } from "./shuffle.js";

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

export class GroupView {
  private selectedPosition: number | null = null;
  private order: number[] = [];
  private keyHandler = (ev: KeyboardEvent) => this.onKey(ev);

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private session: AnnotationSession,
    private onFinished: () => void,
  ) {}

  mount(): void {
    document.addEventListener("keydown", this.keyHandler);
    this.render();
  }

  unmount(): void {
    document.removeEventListener("keydown", this.keyHandler);
  }

  private onKey(ev: KeyboardEvent): void {
    const n = this.order.length;
    const k = Number.parseInt(ev.key, 10);
    if (!Number.isNaN(k) && k >= 1 && k <= Math.min(9, n)) {
      this.select(k - 1);
    } else if (ev.key === "Enter") {
      void this.confirm();
    }
  }

  private select(position: number): void {
    this.selectedPosition = position;
    this.root.querySelectorAll(".candidate").forEach((node, i) => {
      node.classList.toggle("selected", i === position);
    });
    const confirm = this.root.querySelector<HTMLButtonElement>("#confirm");
    if (confirm) confirm.disabled = false;
  }

  private async confirm(): Promise<void> {
    const group = this.session.current();
    if (group === null || this.selectedPosition === null) return;
    const confirm = this.root.querySelector<HTMLButtonElement>("#confirm");
    if (confirm) confirm.disabled = true; // block resubmission
    const canonical = deshuffle(this.order, this.selectedPosition);
    const ok = await this.session.submit(canonical);
    if (!ok) {
      this.renderRetryBanner();
      return;
    }
    this.advance();
  }

  private async retry(): Promise<void> {
    const ok = await this.session.retryPending();
    if (ok) {
      this.advance();
    }
  }

  private advance(): void {
    this.selectedPosition = null;
    if (this.session.finished()) {
      this.unmount();
      this.onFinished();
    } else {
      this.render();
    }
  }

  private renderRetryBanner(): void {
    let banner = this.root.querySelector<HTMLElement>("#retry-banner");
    if (!banner) {
      banner = el("div", "banner");
      banner.id = "retry-banner";
      banner.append(
        el("span", "", "submission failed; your selection is saved locally. "),
      );
      const btn = el("button", "", "Retry");
      btn.addEventListener("click", () => void this.retry());
      banner.append(btn);
      this.root.prepend(banner);
    }
  }

  render(): void {
    const group = this.session.current();
    this.root.replaceChildren();
    if (group === null) {
      this.onFinished();
      return;
    }
    const n = group.image_urls.length;
    const side = Math.round(Math.sqrt(n));
    this.order = displayOrder(this.session.raterId, group.group_id, n);

    const { done, total } = this.session.progress();
    this.root.append(
      el("h2", "", `Pick the worst-looking view`),
      el(
        "p",
        "muted",
        `${group.cloud_id}, face ${group.face_index} - group ${done + 1} of ${total}. ` +
          `Click a view (or press 1-${Math.min(9, n)}), then confirm.`,
      ),
    );

    const grid = el("div", "grid");
    grid.style.gridTemplateColumns = `repeat(${side}, 1fr)`;
    this.order.forEach((canonical, position) => {
      const cell = el("figure", "candidate");
      const img = el("img") as HTMLImageElement;
      img.src = this.api.imageUrl(group.image_urls[canonical]);
      img.alt = `candidate at position ${position + 1}`;
      img.draggable = false;
      const tag = el("figcaption", "", `${position + 1}`);
      cell.append(img, tag);
      cell.addEventListener("click", () => this.select(position));
      grid.append(cell);
    });
    this.root.append(grid);

    const confirm = el("button", "primary", "Confirm worst view");
    confirm.id = "confirm";
    confirm.disabled = true;
    confirm.addEventListener("click", () => void this.confirm());
    this.root.append(confirm);
  }
}

export class ResultsView {
  constructor(private root: HTMLElement, private api: ApiClient) {}

  async render(): Promise<void> {
    this.root.replaceChildren(el("h2", "", "Results"));
    let report: CiReport;
    try {
      report = await this.api.ci();
    } catch {
      this.root.append(el("p", "banner", "could not load results from the server"));
      return;
    }
    if (report.ci === null || report.n_groups === 0) {
      this.root.append(el("p", "muted", "no data: no selections recorded yet"));
      return;
    }
    this.root.append(
      el(
        "p",
        "",
        `Consistency index: ${(report.ci * 100).toFixed(1)}% ` +
          `over ${report.n_groups} of ${report.total_groups} groups ` +
          `(consensus = modal pick, ties to the lowest index).`,
      ),
      el("h3", "", "Per-rater agreement"),
    );
    const raters = el("ul");
    for (const [rater, value] of Object.entries(report.per_rater)) {
      raters.append(el("li", "", `${rater}: ${(value * 100).toFixed(1)}%`));
    }
    this.root.append(raters, el("h3", "", "Per-group consensus"));
    const table = el("table");
    const head = el("tr");
    ["group", "consensus pick", "matches model"].forEach((h) =>
      head.append(el("th", "", h)),
    );
    table.append(head);
    for (const [gid, row] of Object.entries(report.per_group)) {
      const tr = el("tr");
      tr.append(
        el("td", "", gid),
        el("td", "", String(row.consensus)),
        el("td", row.match ? "ok" : "bad", row.match ? "yes" : "no"),
      );
      table.append(tr);
    }
    this.root.append(table);
  }
}
