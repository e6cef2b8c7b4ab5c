import logging

logger = logging.getLogger(__name__)


class ErrorCode:
    """Application-specific error codes"""

    # 400xx - Bad input
    BAD_INPUT = "40000"
    EMPTY_INPUT = "40001"
    LABEL_OUT_OF_RANGE = "40002"
    LENGTH_MISMATCH = "40003"
    TOO_FEW_ITEMS = "40004"

    # 404xx - Not Found errors
    NOT_FOUND = "40400"
    DATASET_NOT_FOUND = "40401"
    CHECKPOINT_NOT_FOUND = "40402"

    # 409xx - Contract violations
    CONTRACT_VIOLATION = "40900"
    FROZEN_PARAMETER_GRADIENT = "40901"

    # 422xx - Configuration / shape errors
    CONFIGURATION_ERROR = "42200"
    SHAPE_MISMATCH = "42201"
    TEMPLATE_ERROR = "42202"
    UNKNOWN_CONFIG_KEY = "42203"
    CONFIG_TYPE_MISMATCH = "42204"

    # 500xx - Internal errors
    INTERNAL_ERROR = "50000"
    CELL_FAILED = "50001"


class BaseLabException(Exception):
    default_detail = "Error."
    error_code = ErrorCode.BAD_INPUT

    def __init__(self, detail=None, error_code=None):
        self.detail = detail if detail is not None else self.default_detail
        super().__init__(self.detail)
        if error_code:
            self.error_code = error_code


class InputException(BaseLabException):
    default_detail = "Invalid input."
    error_code = ErrorCode.BAD_INPUT


class NotFoundException(BaseLabException):
    default_detail = "Resource not found."
    error_code = ErrorCode.NOT_FOUND


class ContractViolationException(BaseLabException):
    default_detail = "Contract violation."
    error_code = ErrorCode.CONTRACT_VIOLATION


class ConfigurationException(BaseLabException):
    default_detail = "Invalid configuration."
    error_code = ErrorCode.CONFIGURATION_ERROR


class ShapeException(ConfigurationException):
    default_detail = "Shape mismatch."
    error_code = ErrorCode.SHAPE_MISMATCH


class TemplateException(ConfigurationException):
    default_detail = "Invalid prompt template."
    error_code = ErrorCode.TEMPLATE_ERROR


class UnknownConfigKeyException(ConfigurationException):
    default_detail = "Unknown config key."
    error_code = ErrorCode.UNKNOWN_CONFIG_KEY


class ConfigTypeException(ConfigurationException):
    default_detail = "Config value has the wrong type."
    error_code = ErrorCode.CONFIG_TYPE_MISMATCH


def custom_exception_handler(exc: BaseException) -> dict:
    """Build the machine-readable error record for any exception."""
    if isinstance(exc, BaseLabException):
        error_code = exc.error_code
        message = exc.detail
    else:
        logger.exception(f"Unhandled {type(exc).__name__}: {exc}", exc_info=exc)
        error_code = ErrorCode.INTERNAL_ERROR
        message = f"{type(exc).__name__}: {exc}"

    return {
        "success": False,
        "error": {
            "code": error_code,
            "message": message,
        },
        "data": None,
    }
