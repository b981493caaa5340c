#include "attnscope/error.hpp"

namespace attnscope {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Io: return "IoError";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteWeight: return "NonFiniteWeight";
    case ErrorCode::UnsupportedArchitecture: return "UnsupportedArchitecture";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::UnknownTokenId: return "UnknownTokenId";
    case ErrorCode::LengthExceeded: return "LengthExceeded";
    case ErrorCode::ReconstructionFailure: return "ReconstructionFailure";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Error";
}

}  // namespace attnscope
