"""Query routing and cited answer synthesis.

The router keeps one retrieval tool per ingested document and decides,
per query, which tools and which auxiliary agents participate. Two
tiers: an LLM-driven route constrained to a JSON reply, and a
deterministic lexical route that both serves as the offline default and
silently absorbs any invalid LLM routing output.

Answers are grounded: retrieved excerpts enter the prompt tagged
"[doc_id:chunk_id]", the completion is scanned for those tags, and only
tags that were actually in the prompt survive as citations. A query that
routes nowhere under grounding-required config gets the configured
refusal text instead of a free-running generation.
"""

from __future__ import annotations

import importlib.resources
import json
import re
import threading
import time
from dataclasses import dataclass, field

from .agents import AGENT_DESCRIPTIONS, AGENT_KINDS, fetch_selected
from .errors import ProviderUnavailable, UnknownDocument
from .index import MetadataFilter
from .llm import CITATION_TAG
from .sessions import Turn

MAX_TOOLS = 3
SCORE_THRESHOLD = 0.2
DEFAULT_TOP_K = 5
DEFAULT_HISTORY_WINDOW = 6
DEFAULT_REFUSAL = (
    "I cannot answer that: no indexed document or agent covers this query."
)

_WORD = re.compile(r"[a-z0-9]+")
_ENTITY = re.compile(r"\bid:([A-Za-z0-9_-]+)")

_IOT_TOKENS = {"sensor", "reading", "telemetry", "temperature", "pressure"}
_PDM_TOKENS = {"predict", "maintenance", "failure", "remaining"}
_XAI_TOKENS = {"why", "explain", "explanation"}


@dataclass(frozen=True)
class ToolSpec:
    tool_id: str
    doc_id: str
    title: str
    version: str
    summary: str
    keywords: tuple
    created_at: float


@dataclass
class RoutingDecision:
    selected_tools: list
    selected_agents: list
    rationale: str
    policy: str


@dataclass
class RouterConfig:
    top_k: int = DEFAULT_TOP_K
    history_window: int = DEFAULT_HISTORY_WINDOW
    grounding_required: bool = True
    refusal_text: str = DEFAULT_REFUSAL
    routing_policy: str = "llm"
    temperature: float = 0.0
    iot_window_s: float = 3600.0


def _load_template(name: str) -> str:
    ref = importlib.resources.files("fieldrag") / "templates" / name
    return ref.read_text(encoding="utf-8")


def _fill(template: str, parts: dict) -> str:
    # plain replacement, not str.format: content may contain braces
    out = template
    for key, value in parts.items():
        out = out.replace("{" + key + "}", value)
    return out


def _terms(text: str) -> set:
    return set(_WORD.findall(text.lower()))


def _norm_token(token: str) -> str:
    # fold trivial plurals so "sensor readings" matches "reading"
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


class ToolRegistry:
    """One retrieval tool per ingested document, keyed by doc_id."""

    def __init__(self, index):
        self._index = index
        self._tools: dict[str, ToolSpec] = {}
        self._write_lock = threading.Lock()

    def register_tool(self, doc, summary: str, keywords=()) -> ToolSpec:
        summary = (summary or "").strip()
        if not summary:
            raise ValueError("tool summary must be non-empty")
        if len(summary) > 1000:
            raise ValueError("tool summary exceeds 1000 characters")
        if not self._index.has_document(doc.doc_id):
            raise UnknownDocument(
                f"document {doc.doc_id} has no indexed chunks"
            )
        spec = ToolSpec(
            tool_id=f"tool-{doc.doc_id}",
            doc_id=doc.doc_id,
            title=doc.title,
            version=doc.version,
            summary=summary,
            keywords=tuple(str(k) for k in keywords),
            created_at=time.time(),
        )
        with self._write_lock:
            self._tools[doc.doc_id] = spec  # same doc_id supersedes
        return spec

    def unregister_document(self, doc_id: str) -> None:
        with self._write_lock:
            self._tools.pop(doc_id, None)

    def list_tools(self) -> list:
        return sorted(self._tools.values(), key=lambda t: t.tool_id)

    def get(self, tool_id: str):
        for tool in self._tools.values():
            if tool.tool_id == tool_id:
                return tool
        return None

    def __contains__(self, tool_id: str) -> bool:
        return self.get(tool_id) is not None


def _match_agents(tokens: set) -> dict:
    """Map selected agent kind -> the tokens that triggered it."""
    folded = {_norm_token(t) for t in tokens}
    matched = {}
    iot = folded & _IOT_TOKENS
    if iot:
        matched["iot"] = iot
    pdm = folded & _PDM_TOKENS
    if pdm:
        matched["pdm"] = pdm
    xai = folded & _XAI_TOKENS
    if xai and any(t.startswith("predict") or t == "model" for t in folded):
        matched["xai"] = xai
    return matched


def route_lexical(query: str, registry: ToolRegistry) -> RoutingDecision:
    """Deterministic term-overlap routing.

    score(tool) = |query terms ∩ tool terms| / |query terms|, where tool
    terms come from title, keywords, and summary. Tools scoring at least
    0.2 are selected best-first, at most three.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    query_terms = _terms(query)
    scored = []
    matched_per_tool = {}
    for tool in registry.list_tools():
        tool_terms = _terms(tool.title) | _terms(tool.summary)
        for kw in tool.keywords:
            tool_terms |= _terms(kw)
        overlap = query_terms & tool_terms
        score = len(overlap) / len(query_terms) if query_terms else 0.0
        if score >= SCORE_THRESHOLD:
            scored.append((-score, tool.tool_id))
            matched_per_tool[tool.tool_id] = overlap
    scored.sort()
    selected_tools = [tool_id for _, tool_id in scored[:MAX_TOOLS]]

    agent_matches = _match_agents(query_terms)
    selected_agents = [a for a in AGENT_KINDS if a in agent_matches]

    notes = []
    for tool_id in selected_tools:
        terms = ", ".join(sorted(matched_per_tool[tool_id]))
        notes.append(f"{tool_id} matched [{terms}]")
    for agent in selected_agents:
        terms = ", ".join(sorted(agent_matches[agent]))
        notes.append(f"agent {agent} triggered by [{terms}]")
    rationale = "; ".join(notes) if notes else "no tool or agent matched"
    return RoutingDecision(selected_tools, selected_agents, rationale, "lexical")


def _parse_routing_json(text: str):
    match = re.search(r"\{.*\}", text, re.DOTALL)
    if not match:
        return None
    try:
        obj = json.loads(match.group(0))
    except ValueError:
        return None
    if not isinstance(obj, dict):
        return None
    tools = obj.get("tools", [])
    agents = obj.get("agents", [])
    if not isinstance(tools, list) or not isinstance(agents, list):
        return None
    return tools, agents


def route_llm(
    query: str,
    registry: ToolRegistry,
    history,
    llm,
    *,
    allow_fallback: bool = True,
) -> RoutingDecision:
    """LLM routing constrained to a JSON reply, with lexical fallback.

    Invalid names are dropped; an unparseable reply, a provider failure,
    or an empty validated decision falls back to route_lexical.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")

    def fallback():
        if not allow_fallback:
            raise ProviderUnavailable("llm routing failed and fallback disabled")
        return route_lexical(query, registry)

    tool_lines = [
        f"- {t.tool_id}: {t.title} (version {t.version}) - {t.summary}"
        for t in registry.list_tools()
    ] or ["(none registered)"]
    agent_lines = [f"- {AGENT_DESCRIPTIONS[a]}" for a in AGENT_KINDS]
    history_lines = [
        f"{t.role}: {' '.join(t.text.split())}" for t in history
    ] or ["(none)"]
    prompt = _fill(
        _load_template("routing_prompt.txt"),
        {
            "tools": "\n".join(tool_lines),
            "agents": "\n".join(agent_lines),
            "history": "\n".join(history_lines),
            "query": query,
        },
    )
    try:
        reply = llm.complete(prompt, temperature=0.0)
    except ProviderUnavailable:
        return fallback()
    parsed = _parse_routing_json(reply)
    if parsed is None:
        return fallback()
    raw_tools, raw_agents = parsed
    tools = [t for t in raw_tools if isinstance(t, str) and t in registry]
    seen = set()
    tools = [t for t in tools if not (t in seen or seen.add(t))]
    agents = [a for a in AGENT_KINDS if a in raw_agents]
    if not tools and not agents:
        return fallback()
    return RoutingDecision(
        tools, agents, "llm routing accepted", "llm"
    )


def extract_entities(query: str) -> dict:
    """Pull 'id:<token>' markers; the first one serves every agent."""
    ids = _ENTITY.findall(query)
    if not ids:
        return {}
    return {agent: ids[0] for agent in AGENT_KINDS}


@dataclass
class AnswerOutcome:
    turn: Turn
    decision: RoutingDecision
    excerpt_count: int = 0
    agent_failures: dict = field(default_factory=dict)


class ChatRouter:
    """Composition point for routing, retrieval, agents, and synthesis."""

    def __init__(
        self,
        *,
        index,
        registry: ToolRegistry,
        sessions,
        llm,
        embed_query,
        agent_configs=None,
        config: RouterConfig | None = None,
    ):
        self.index = index
        self.registry = registry
        self.sessions = sessions
        self.llm = llm
        self.embed_query = embed_query
        self.agent_configs = agent_configs or {}
        self.config = config or RouterConfig()

    def route(self, query: str, history=()) -> RoutingDecision:
        if self.config.routing_policy == "lexical":
            return route_lexical(query, self.registry)
        return route_llm(query, self.registry, list(history), self.llm)

    def _gather_excerpts(self, query: str, decision: RoutingDecision):
        if not decision.selected_tools:
            return []
        vector = self.embed_query(query)
        excerpts = []
        for tool_id in decision.selected_tools:
            tool = self.registry.get(tool_id)
            if tool is None:
                continue
            hits = self.index.top_k(
                vector,
                self.config.top_k,
                MetadataFilter({"doc_id": tool.doc_id}),
            )
            for hit in hits:
                excerpts.append(
                    (hit.doc_id, hit.chunk_id, hit.metadata.get("text", ""))
                )
        return excerpts

    def _gather_agents(self, query: str, decision: RoutingDecision, entities):
        merged = extract_entities(query)
        merged.update(entities or {})
        wanted = {
            a: merged[a] for a in decision.selected_agents if a in merged
        }
        if not wanted:
            return {}, {}
        configured = {a: v for a, v in wanted.items() if a in self.agent_configs}
        payloads, failures = fetch_selected(
            configured,
            self.agent_configs,
            iot_window_s=self.config.iot_window_s,
        )
        for agent in wanted:
            if agent not in configured:
                failures[agent] = "no endpoint configured"
        return payloads, failures

    def _render_prompt(self, session, query, excerpts, payloads, failures):
        recent = session.turns[-self.config.history_window:]
        history_lines = [
            f"{t.role}: {' '.join(t.text.split())}" for t in recent
        ] or ["(none)"]
        context_lines = [
            f"[{doc_id}:{chunk_id}] {' '.join(text.split())}"
            for doc_id, chunk_id, text in excerpts
        ] or ["(none)"]
        agent_lines = []
        for agent in AGENT_KINDS:
            if agent in payloads:
                agent_lines.append(payloads[agent].summary_text)
            elif agent in failures:
                agent_lines.append(f"agent {agent} unavailable")
        if not agent_lines:
            agent_lines = ["(none)"]
        return _fill(
            _load_template("chat_prompt.txt"),
            {
                "system": session.system_prompt,
                "history": "\n".join(history_lines),
                "context": "\n".join(context_lines),
                "agents": "\n".join(agent_lines),
                "query": query,
            },
        )

    @staticmethod
    def _extract_citations(completion: str, excerpts) -> list:
        supplied = {(d, c) for d, c, _ in excerpts}
        citations = []
        for match in CITATION_TAG.finditer(completion):
            pair = (match.group(1), match.group(2))
            if pair in supplied and pair not in citations:
                citations.append(pair)
        return citations

    def answer(self, session_id: str, query: str, *, entities=None) -> Turn:
        """Run the full pipeline and append one user/assistant turn pair."""
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        with self.sessions.lock_for_answer(session_id):
            session = self.sessions.get_session(session_id)
            decision = self.route(query, session.turns)
            user_turn = Turn(role="user", text=query)

            if (
                self.config.grounding_required
                and not decision.selected_tools
                and not decision.selected_agents
            ):
                assistant = Turn(
                    role="assistant",
                    text=self.config.refusal_text,
                    citations=[],
                    tool_trace=[],
                )
                self.sessions.append_turns(session_id, [user_turn, assistant])
                return assistant

            excerpts = self._gather_excerpts(query, decision)
            payloads, failures = self._gather_agents(query, decision, entities)

            if (
                self.config.grounding_required
                and not excerpts
                and not payloads
            ):
                # routed somewhere, but nothing came back to ground on
                assistant = Turn(
                    role="assistant",
                    text=self.config.refusal_text,
                    citations=[],
                    tool_trace=[],
                )
                self.sessions.append_turns(session_id, [user_turn, assistant])
                return assistant

            prompt = self._render_prompt(
                session, query, excerpts, payloads, failures
            )
            completion = self.llm.complete(
                prompt, temperature=self.config.temperature
            )
            citations = self._extract_citations(completion, excerpts)
            trace = list(decision.selected_tools) + [
                a for a in AGENT_KINDS if a in payloads
            ]
            assistant = Turn(
                role="assistant",
                text=completion,
                citations=citations,
                tool_trace=trace,
            )
            self.sessions.append_turns(session_id, [user_turn, assistant])
            return assistant
