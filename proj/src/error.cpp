#include "pcsharp/error.hpp"

namespace pcsharp {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::CyclicGraph: return "CyclicGraph";
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::NotATree: return "NotATree";
    case ErrorKind::ScopeMismatch: return "ScopeMismatch";
    case ErrorKind::NotAChild: return "NotAChild";
    case ErrorKind::StaleTrace: return "StaleTrace";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::CostGuardExceeded: return "CostGuardExceeded";
    case ErrorKind::DepthTooLarge: return "DepthTooLarge";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::UnknownManifold: return "UnknownManifold";
    case ErrorKind::ZeroTrainNLL: return "ZeroTrainNLL";
    case ErrorKind::DivergedNaN: return "DivergedNaN";
    case ErrorKind::CapExceeded: return "CapExceeded";
  }
  return "Unknown";
}

}  // namespace pcsharp
