#include "refinery/error.hpp"

namespace refinery {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_grasp: return "invalid-grasp";
        case ErrorKind::empty_ground_truth: return "empty-ground-truth";
        case ErrorKind::parse: return "parse";
        case ErrorKind::io: return "io";
        case ErrorKind::integrity: return "integrity";
        case ErrorKind::encode: return "encode";
        case ErrorKind::undefined_angle: return "undefined-angle";
        case ErrorKind::shape: return "shape";
        case ErrorKind::ingest: return "ingest";
        case ErrorKind::state: return "state";
        case ErrorKind::contract: return "contract";
        case ErrorKind::replay: return "replay";
        case ErrorKind::not_found: return "not-found";
        case ErrorKind::conflict: return "conflict";
        case ErrorKind::validation: return "validation";
    }
    return "unknown";
}

}  // namespace refinery
