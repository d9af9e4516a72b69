#include "fedmeta/error.hpp"

namespace fedmeta {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::ShapeMismatch: return "shape_mismatch";
        case ErrorKind::LayoutMismatch: return "layout_mismatch";
        case ErrorKind::NonFinite: return "non_finite";
        case ErrorKind::InsufficientData: return "insufficient_data";
        case ErrorKind::CorruptData: return "corrupt_data";
        case ErrorKind::Io: return "io";
        case ErrorKind::QuorumNotMet: return "quorum_not_met";
        case ErrorKind::Config: return "config";
    }
    return "unknown";
}

}  // namespace fedmeta
