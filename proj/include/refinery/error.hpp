#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace refinery {

enum class ErrorKind {
  Validation,
  Transport,
  CacheMiss,
  EmptyCompletion,
  ScriptedMiss,
  Render,
  TagNotFound,
  PlannerParse,
  MissingRefinement,
  JudgeParse,
  Bounds,
  Domain,
  Stat,
  Ingest,
  Aggregation,
  Config,
};

std::string_view to_string(ErrorKind kind);

/// Base error for everything the engine throws on purpose.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// A tag could not be located; carries the full raw text for diagnostics.
class TagNotFoundError : public Error {
 public:
  TagNotFoundError(std::string tag, std::string raw)
      : Error(ErrorKind::TagNotFound, "tag <" + tag + "> not found"),
        tag_(std::move(tag)),
        raw_(std::move(raw)) {}

  const std::string& tag() const noexcept { return tag_; }
  const std::string& raw_text() const noexcept { return raw_; }

 private:
  std::string tag_;
  std::string raw_;
};

/// Transport failure; `transient` decides whether the retry policy may retry.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, bool transient, int status = 0)
      : Error(ErrorKind::Transport, message), transient_(transient), status_(status) {}

  bool transient() const noexcept { return transient_; }
  int status() const noexcept { return status_; }

 private:
  bool transient_;
  int status_;
};

}  // namespace refinery
