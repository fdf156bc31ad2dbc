from __future__ import annotations


class IsacError(Exception):
    """Error carrying a stable machine-readable code.

    Every failure the network functions report over the bus is one of these;
    ``code`` is what callers branch on and what ends up in trace summaries.
    """

    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail

    def to_doc(self) -> dict:
        return {"code": self.code, "detail": self.detail}
