"""Exception hierarchy.

Every error carries a module-prefixed ``code`` (``raster.MissingGlyph``) so the
command line can report failures in a single machine-parseable line.
"""


class FontPairError(Exception):
    module = "fontpair"

    @property
    def code(self):
        return f"{self.module}.{type(self).__name__}"


# raster
class RasterError(FontPairError):
    module = "raster"


class UnreadableFile(RasterError):
    pass


class UnparseableFont(RasterError):
    pass


class MissingGlyph(RasterError):
    pass


class FontRejected(RasterError):
    def __init__(self, font_id, letters):
        self.font_id = font_id
        self.letters = sorted(letters)
        super().__init__(f"{font_id}: missing {''.join(self.letters)}")


# pairgen
class PairgenError(FontPairError):
    module = "pairgen"


class MissingGlyphFile(PairgenError):
    pass


class InsufficientFonts(PairgenError):
    pass


class SizeMismatch(PairgenError):
    pass


class TooFewFonts(PairgenError):
    pass


# netmodel
class NetmodelError(FontPairError):
    module = "netmodel"


class InvalidConfig(NetmodelError):
    pass


class ShapeMismatch(NetmodelError):
    pass


# trainer
class TrainerError(FontPairError):
    module = "trainer"


class LeakageDetected(TrainerError):
    pass


class EmptyDataset(TrainerError):
    pass


# evaluator
class EvaluatorError(FontPairError):
    module = "evaluator"


class EmptyCorpus(EvaluatorError):
    pass


# explain
class ExplainError(FontPairError):
    module = "explain"


class IdenticalCharacters(ExplainError):
    pass


# cli
class MissingReport(FontPairError):
    module = "cli"
