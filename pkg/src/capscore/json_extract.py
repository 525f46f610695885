"""Pull the first well-formed JSON array/object out of a model reply.

Model replies routinely wrap JSON in markdown fences or lead with prose
("Here is the list: [...]"). The extractor tolerates both; anything it
cannot recover is left to the gateway's single repair re-prompt.
"""

import json
import re

_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


def extract_json_value(text: str):
    """Return the first JSON array or object found in `text`.

    Raises ValueError when no well-formed array/object can be located.
    """
    stripped = text.strip()
    try:
        value = json.loads(stripped)
        if isinstance(value, (list, dict)):
            return value
    except json.JSONDecodeError:
        pass

    for fenced in _FENCE_RE.findall(text):
        try:
            value = json.loads(fenced.strip())
            if isinstance(value, (list, dict)):
                return value
        except json.JSONDecodeError:
            continue

    decoder = json.JSONDecoder()
    for match in re.finditer(r"[\[{]", text):
        start = match.start()
        try:
            value, _ = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, (list, dict)):
            return value

    raise ValueError("no JSON array or object found in reply")
