// SPDX-License-Identifier: Apache-2.0
#include "kdkit/errors.hpp"

namespace kd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::ConfigKey: return "ConfigKey";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Numeric: return "NumericError";
    case ErrorKind::Target: return "TargetError";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Batch: return "BatchError";
    case ErrorKind::Subset: return "SubsetError";
    case ErrorKind::Data: return "DataError";
    case ErrorKind::CKAUndefined: return "CKAUndefined";
    case ErrorKind::Tap: return "TapError";
    case ErrorKind::Report: return "ReportError";
    case ErrorKind::Parse: return "ParseError";
  }
  return "Error";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Data:
    case ErrorKind::Subset:
    case ErrorKind::Parse:
      return 3;
    case ErrorKind::Numeric:
    case ErrorKind::CKAUndefined:
      return 4;
    default:
      return 2;
  }
}

}  // namespace kd
