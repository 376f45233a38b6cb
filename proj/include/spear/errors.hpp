#pragma once

#include <stdexcept>
#include <string>

namespace spear {

// Error taxonomy. Every failure raised by the library carries one of these
// codes so callers (and tests) can match on cause rather than message text.
enum class Errc {
  DuplicateKey,
  TemplateSyntax,
  UnknownKey,
  UnknownRefiner,
  RefinerFailure,
  UnboundPlaceholder,
  IncludeCycle,
  UnknownInclude,
  DuplicateView,
  UnknownVersion,
  BrokenHashChain,
  MissingCreate,
  TypeMismatch,
  UnknownSource,
  UnknownAgent,
  AgentFailure,
  BackendError,
  FixtureMismatch,
  TransportError,
  ProtocolError,
  NoGenEvents,
  NoCandidateView,
  MissingStats,
  CalibrationFailed,
  NotDerived,
  ValidationError,
  ConfigError,
};

const char* errc_name(Errc code);

class SpearError : public std::runtime_error {
 public:
  SpearError(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace spear
