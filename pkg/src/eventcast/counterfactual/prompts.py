"""Prompt templates for summarization, sentiment rating and counterfactual rewriting.

Templates are kept verbatim, including their original wording quirks, since
generated data is compared across runs byte for byte.
"""

from __future__ import annotations

import re

from ..errors import RangeError

TEMPLATE_VERSION = "prompts-v1"

SENTIMENT_LABELS = (
    "Extremely Negative",
    "Strongly Negative",
    "Very Negative",
    "Moderate Negative",
    "Slightly Negative",
    "Neutral",
    "Slightly Positive",
    "Moderate Positive",
    "Very Positive",
    "Strongly Positive",
    "Extremely Positive",
)

CHUNK_SUMMARY = (
    "You are given chunk {chunk_idx} of a {text_type} report. "
    "Your task is to generate a summary within {number_of_words} words.\n"
    "The content of chunk {chunk_idx} is as follows:\n"
    "{original_text}\n"
    "Please provide a concise summary, while keep the key variables:"
)

FINAL_SUMMARY = (
    "You are given {chunk_num} summaries of different chunks from a {text_type} report. "
    "Your task is to generate an overall summary within {number_of_words} words.\n"
    "The chunk summaries are as follows:\n"
    "{chunk_summaries}\n"
    "Please provide a comprehensive summary of the entire report, while keep the key variables:"
)

SENTIMENT = (
    "Please analyze the sentiment of the following {text_type} summary and rate it on a scale "
    "from 0 to 10, where:\n"
    "0 = Extremely Negative; 1 = Strongly Negative; 2 = Very; Negative; 3 = Moderate Negative; "
    "4 = Slightly Negative; 5 = Neutral; 6 = Slightly Positive; 7 = Moderate Positive; "
    "8 = Very Positive; 9 = Strongly Positive; 10 = Extremely Positive\n"
    "{text_type} summary: {text}\n"
    "Output the sentiment analysis as:\n"
    "Sentiment rating: (0 to 10), Explanation:"
)

COUNTERFACTUAL = (
    "The original text has been identified with a sentiment rating of "
    "{current_sentiment_rating} ({current_sentiment}).\n"
    "Your task is to generate a counterfactual version of the text that aligns with a sentiment "
    "rating of {target_sentiment_rating} ({target_sentiment}) by modifying the key facts and "
    "information to reflect the specified target sentiment score about the economy, while keep "
    "the overall format and the sentiment-neural content unchanged.\n"
    "Original text: {original_text}\n"
    "Counterfactual text with a sentiment rating of {target_sentiment_rating} ({target_sentiment}): "
)


def sentiment_label(rating: int) -> str:
    if not 0 <= rating < len(SENTIMENT_LABELS):
        raise RangeError(f"sentiment rating {rating} outside [0, 10]")
    return SENTIMENT_LABELS[rating]


def render_chunk_summary(chunk_idx: int, text_type: str, number_of_words: int, original_text: str) -> str:
    return CHUNK_SUMMARY.format(
        chunk_idx=chunk_idx,
        text_type=text_type,
        number_of_words=number_of_words,
        original_text=original_text,
    )


def render_final_summary(chunk_num: int, text_type: str, number_of_words: int, chunk_summaries: list[str]) -> str:
    return FINAL_SUMMARY.format(
        chunk_num=chunk_num,
        text_type=text_type,
        number_of_words=number_of_words,
        chunk_summaries="\n".join(chunk_summaries),
    )


def render_sentiment(text_type: str, text: str) -> str:
    return SENTIMENT.format(text_type=text_type, text=text)


def render_counterfactual(current: int, target: int, original_text: str) -> str:
    return COUNTERFACTUAL.format(
        current_sentiment_rating=current,
        current_sentiment=sentiment_label(current),
        target_sentiment_rating=target,
        target_sentiment=sentiment_label(target),
        original_text=original_text,
    )


# -- inverse parsing, used by the offline stub backend ---------------------

_CHUNK_RE = re.compile(
    r"\AYou are given chunk (?P<chunk_idx>\d+) of a (?P<text_type>.*?) report\. "
    r"Your task is to generate a summary within (?P<words>\d+) words\.\n"
    r"The content of chunk \d+ is as follows:\n(?P<text>.*)\n"
    r"Please provide a concise summary, while keep the key variables:\Z",
    re.S,
)
_FINAL_RE = re.compile(
    r"\AYou are given (?P<chunk_num>\d+) summaries of different chunks from a (?P<text_type>.*?) report\. "
    r"Your task is to generate an overall summary within (?P<words>\d+) words\.\n"
    r"The chunk summaries are as follows:\n(?P<text>.*)\n"
    r"Please provide a comprehensive summary of the entire report, while keep the key variables:\Z",
    re.S,
)
_SENTIMENT_RE = re.compile(
    r"\APlease analyze the sentiment of the following (?P<text_type>.*?) summary.*?\n"
    r"(?P=text_type) summary: (?P<text>.*)\n"
    r"Output the sentiment analysis as:\n",
    re.S,
)
_CF_RE = re.compile(
    r"\AThe original text has been identified with a sentiment rating of (?P<current>\d+) \(.*?\)\.\n"
    r"Your task is to generate a counterfactual version of the text that aligns with a sentiment "
    r"rating of (?P<target>\d+) .*?\n"
    r"Original text: (?P<text>.*)\n"
    r"Counterfactual text with a sentiment rating of \d+ \(.*?\): \Z",
    re.S,
)


def identify(prompt: str) -> tuple[str, dict]:
    """Which template produced ``prompt`` and its recovered variables."""
    for kind, pattern in (
        ("chunk", _CHUNK_RE),
        ("final", _FINAL_RE),
        ("sentiment", _SENTIMENT_RE),
        ("counterfactual", _CF_RE),
    ):
        m = pattern.match(prompt)
        if m:
            return kind, m.groupdict()
    return "unknown", {}
