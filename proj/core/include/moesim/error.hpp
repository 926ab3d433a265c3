#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace moesim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Raised when a trace file cannot be parsed. `line` is 1-based, `offset` is
// the byte offset of the start of the offending line.
class TraceParseError : public Error {
 public:
  TraceParseError(const std::string& what, std::int64_t line, std::int64_t offset,
                  std::string last_complete_record)
      : Error(what), line_(line), offset_(offset),
        last_complete_(std::move(last_complete_record)) {}
  std::int64_t line() const { return line_; }
  std::int64_t offset() const { return offset_; }
  const std::string& last_complete_record() const { return last_complete_; }

 private:
  std::int64_t line_;
  std::int64_t offset_;
  std::string last_complete_;
};

class ShapeMismatchError : public Error {
 public:
  ShapeMismatchError(const std::string& what, std::string request_id, int iteration,
                     int layer)
      : Error(what), request_id_(std::move(request_id)), iteration_(iteration),
        layer_(layer) {}
  const std::string& request_id() const { return request_id_; }
  int iteration() const { return iteration_; }
  int layer() const { return layer_; }

 private:
  std::string request_id_;
  int iteration_;
  int layer_;
};

class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

class EmptyStoreError : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

}  // namespace moesim
