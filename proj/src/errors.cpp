#include "spear/errors.hpp"

namespace spear {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::DuplicateKey: return "DuplicateKey";
    case Errc::TemplateSyntax: return "TemplateSyntaxError";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::UnknownRefiner: return "UnknownRefiner";
    case Errc::RefinerFailure: return "RefinerFailure";
    case Errc::UnboundPlaceholder: return "UnboundPlaceholder";
    case Errc::IncludeCycle: return "IncludeCycle";
    case Errc::UnknownInclude: return "UnknownInclude";
    case Errc::DuplicateView: return "DuplicateView";
    case Errc::UnknownVersion: return "UnknownVersion";
    case Errc::BrokenHashChain: return "BrokenHashChain";
    case Errc::MissingCreate: return "MissingCreate";
    case Errc::TypeMismatch: return "TypeMismatch";
    case Errc::UnknownSource: return "UnknownSource";
    case Errc::UnknownAgent: return "UnknownAgent";
    case Errc::AgentFailure: return "AgentFailure";
    case Errc::BackendError: return "BackendError";
    case Errc::FixtureMismatch: return "FixtureMismatch";
    case Errc::TransportError: return "TransportError";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::NoGenEvents: return "NoGenEvents";
    case Errc::NoCandidateView: return "NoCandidateView";
    case Errc::MissingStats: return "MissingStats";
    case Errc::CalibrationFailed: return "CalibrationFailed";
    case Errc::NotDerived: return "NotDerived";
    case Errc::ValidationError: return "ValidationError";
    case Errc::ConfigError: return "ConfigError";
  }
  return "UnknownError";
}

}  // namespace spear
