// Browser chat client for the seqchat service. One page, one script, one
// stylesheet; talks to POST /api/reply and GET /api/health only.
//
// All user- and service-provided strings reach the DOM through textContent,
// never through markup, so nothing is ever interpreted as HTML. The UI is a
// two-state machine (idle | waiting) with at most one request in flight.

export type Author = "human" | "bot";

export interface ChatMessage {
  author: Author;
  text: string;
  timestamp: number;
  pending: boolean;
}

export interface ReplyResponse {
  reply: string;
  fallback_used: boolean;
  latency_ms: number;
}

export interface HealthResponse {
  status: string;
  vocab_size: number;
  checkpoint: string;
  beam_width: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export type ChatState = "idle" | "waiting";

export interface ChatAppOptions {
  fetchFn?: FetchLike;
  sessionId?: string;
  now?: () => number;
}

export interface ChatApp {
  send(text: string): boolean;
  retry(): boolean;
  state(): ChatState;
  messages(): readonly ChatMessage[];
  sessionId: string;
  root: HTMLElement;
}

export function newSessionId(): string {
  const bytes = new Uint8Array(8);
  crypto.getRandomValues(bytes);
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function createChatApp(root: HTMLElement, options: ChatAppOptions = {}): ChatApp {
  const fetchFn: FetchLike = options.fetchFn ?? ((input, init) => fetch(input, init));
  const sessionId = options.sessionId ?? newSessionId();
  const now = options.now ?? Date.now;

  root.innerHTML = "";
  const header = el("header", "header");
  header.appendChild(el("h1", "", "seqchat"));
  const status = el("span", "status");
  header.appendChild(status);
  const transcript = el("div", "messages");
  const form = document.createElement("form");
  form.className = "composer";
  const input = document.createElement("input");
  input.autocomplete = "off";
  input.placeholder = "Say something";
  const button = document.createElement("button");
  button.type = "submit";
  button.textContent = "Send";
  form.appendChild(input);
  form.appendChild(button);
  root.appendChild(header);
  root.appendChild(transcript);
  root.appendChild(form);

  const messages: ChatMessage[] = [];
  let state: ChatState = "idle";
  let failedText: string | null = null;

  function el(tag: string, className: string, text?: string): HTMLElement {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  function render(): void {
    transcript.innerHTML = "";
    for (const message of messages) {
      const bubble = el("div", `bubble ${message.author}`);
      if (message.pending) {
        bubble.classList.add("pending");
        bubble.textContent = "…"; // typing indicator
      } else {
        bubble.textContent = message.text;
      }
      transcript.appendChild(bubble);
    }
    if (failedText !== null) {
      const error = el("div", "bubble error");
      error.appendChild(el("span", "", "The service did not answer."));
      const retryButton = document.createElement("button");
      retryButton.type = "button";
      retryButton.className = "retry";
      retryButton.textContent = "Retry";
      retryButton.addEventListener("click", () => retry());
      error.appendChild(retryButton);
      transcript.appendChild(error);
    }
    transcript.scrollTop = transcript.scrollHeight; // pin to newest
    button.disabled = state === "waiting";
  }

  async function deliver(text: string): Promise<void> {
    state = "waiting";
    failedText = null;
    const pending: ChatMessage = { author: "bot", text: "", timestamp: now(), pending: true };
    messages.push(pending);
    render();
    try {
      const response = await fetchFn("/api/reply", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ text, session_id: sessionId }),
      });
      if (!response.ok) {
        throw new Error(`status ${response.status}`);
      }
      const payload = (await response.json()) as ReplyResponse;
      pending.text = payload.reply;
      pending.pending = false;
      pending.timestamp = now();
    } catch {
      messages.pop(); // drop the typing indicator
      failedText = text;
    } finally {
      state = "idle";
      render();
      input.focus();
    }
  }

  function send(text: string): boolean {
    const trimmed = text.trim();
    if (!trimmed || state === "waiting") {
      return false;
    }
    messages.push({ author: "human", text: trimmed, timestamp: now(), pending: false });
    input.value = "";
    void deliver(trimmed);
    return true;
  }

  function retry(): boolean {
    if (failedText === null || state === "waiting") {
      return false;
    }
    const text = failedText;
    void deliver(text);
    return true;
  }

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    send(input.value);
  });

  void (async () => {
    try {
      const response = await fetchFn("/api/health");
      if (!response.ok) throw new Error(`status ${response.status}`);
      const health = (await response.json()) as HealthResponse;
      status.textContent = `${health.vocab_size} words, beam ${health.beam_width}`;
    } catch {
      status.textContent = "service unreachable";
    }
  })();

  render();
  input.focus();
  return { send, retry, state: () => state, messages: () => messages, sessionId, root };
}

// Boot only on the real page; tests build their own root.
const mount = typeof document !== "undefined" ? document.getElementById("app") : null;
if (mount) {
  createChatApp(mount);
}
