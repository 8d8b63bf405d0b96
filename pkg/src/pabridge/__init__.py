"""Conversation-starter retrieval with active-query alignment and
semantic-code popularity debiasing, plus a closed-loop exposure simulator."""

__version__ = "0.1.0"
