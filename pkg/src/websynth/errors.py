"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class WebsynthError(Exception):
    """Base class for every error raised by this package."""


# corpus_graph
class UnreadableArchive(WebsynthError):
    pass


class MalformedRecord(WebsynthError):
    pass


class EmptyArchive(WebsynthError):
    pass


class UnknownNode(WebsynthError, KeyError):
    pass


# subgraph_sampler
class NoEligibleSeed(WebsynthError):
    pass


# entity_distiller
class NoContent(WebsynthError):
    pass


class UngroundedTheme(WebsynthError):
    pass


class EmptySubgraph(WebsynthError):
    pass


# qa_synthesizer
class HopConstraintViolation(WebsynthError):
    pass


class AnswerLeak(WebsynthError):
    pass


class ParaphraseLeak(WebsynthError):
    pass


class SurfaceLeak(WebsynthError):
    pass


# llm_gateway
class GatewayError(WebsynthError):
    pass


class TransportError(GatewayError):
    pass


class ScriptExhausted(GatewayError):
    pass


class ToolParseError(GatewayError):
    pass


# trajectory_engine
class MissingSummary(WebsynthError):
    pass


class MalformedAction(WebsynthError):
    pass


# toolbelt
class NotFound(WebsynthError):
    pass


class ExternalUnavailable(WebsynthError):
    pass


class UnknownTool(WebsynthError):
    pass


# dataset_io
class IncompleteTrajectory(WebsynthError):
    pass


class WriteFailure(WebsynthError):
    pass


class EmptySet(WebsynthError):
    pass


# cli
class ConfigInvalid(WebsynthError):
    pass


class MissingUpstream(WebsynthError):
    pass
