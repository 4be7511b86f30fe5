#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace offtrack {

// Errors are reported with exceptions; each category gets its own type so
// callers can route e.g. an empty object sample to passthrough.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class StructureError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptySampleError : public Error {
 public:
  using Error::Error;
};

enum class ClassId : std::uint8_t { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassId, kNumClasses> kAllClasses = {
    ClassId::kVehicle, ClassId::kPedestrian, ClassId::kCyclist};

inline constexpr std::size_t class_index(ClassId c) { return static_cast<std::size_t>(c); }

inline std::string_view class_name(ClassId c) {
  switch (c) {
    case ClassId::kVehicle:
      return "vehicle";
    case ClassId::kPedestrian:
      return "pedestrian";
    case ClassId::kCyclist:
      return "cyclist";
  }
  return "vehicle";
}

inline ClassId parse_class(std::string_view name) {
  if (name == "vehicle") return ClassId::kVehicle;
  if (name == "pedestrian") return ClassId::kPedestrian;
  if (name == "cyclist") return ClassId::kCyclist;
  throw ConfigError("unknown class name '" + std::string(name) + "'");
}

// Per-class value table indexed by ClassId.
template <typename T>
struct PerClass {
  std::array<T, kNumClasses> values{};

  T& operator[](ClassId c) { return values[class_index(c)]; }
  const T& operator[](ClassId c) const { return values[class_index(c)]; }
};

}  // namespace offtrack
