class DescrambleKitError(Exception):
    pass


class ShapeError(DescrambleKitError, ValueError):
    pass


class NonFiniteError(DescrambleKitError, ValueError):
    pass


class AsymmetricMatrixError(DescrambleKitError, ValueError):
    pass


class DegenerateProblemError(DescrambleKitError, ValueError):
    pass


class UnsupportedOperationError(DescrambleKitError, ValueError):
    pass


class MatrixFormatError(DescrambleKitError, ValueError):
    pass


class NetFormatError(MatrixFormatError):
    pass


class ConfigError(DescrambleKitError, ValueError):
    pass


class TrainingDivergedError(DescrambleKitError, RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
