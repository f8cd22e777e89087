#pragma once

#include <array>
#include <string>
#include <string_view>

#include "facecue/error.hpp"

namespace facecue {

enum class Gender { Female, Male };
enum class Expression { Neutral, Happy, Disgust, Surprise, Sad };
enum class Ethnicity { Asian, NonAsian };

inline constexpr std::array<Expression, 5> kAllExpressions = {
    Expression::Neutral, Expression::Happy, Expression::Disgust,
    Expression::Surprise, Expression::Sad};

inline constexpr std::array<Expression, 4> kNonNeutralExpressions = {
    Expression::Happy, Expression::Disgust, Expression::Surprise,
    Expression::Sad};

inline constexpr std::array<Gender, 2> kGenders = {Gender::Female, Gender::Male};

constexpr std::size_t index_of(Expression e) { return static_cast<std::size_t>(e); }
constexpr std::size_t index_of(Gender g) { return static_cast<std::size_t>(g); }

inline std::string_view to_string(Gender g) {
  return g == Gender::Female ? "Female" : "Male";
}

inline std::string_view to_string(Ethnicity e) {
  return e == Ethnicity::Asian ? "Asian" : "NonAsian";
}

inline std::string_view to_string(Expression e) {
  switch (e) {
    case Expression::Neutral: return "Neutral";
    case Expression::Happy: return "Happy";
    case Expression::Disgust: return "Disgust";
    case Expression::Surprise: return "Surprise";
    case Expression::Sad: return "Sad";
  }
  return "?";
}

// Two-letter axis labels used in expression matrices (NT/HP/DI/SP/SD).
inline std::string_view short_label(Expression e) {
  switch (e) {
    case Expression::Neutral: return "NT";
    case Expression::Happy: return "HP";
    case Expression::Disgust: return "DI";
    case Expression::Surprise: return "SP";
    case Expression::Sad: return "SD";
  }
  return "?";
}

inline Gender parse_gender(std::string_view s) {
  if (s == "Female" || s == "F" || s == "female") return Gender::Female;
  if (s == "Male" || s == "M" || s == "male") return Gender::Male;
  throw UnknownLabelError("gender '" + std::string(s) + "'");
}

inline Expression parse_expression(std::string_view s) {
  for (Expression e : kAllExpressions) {
    if (s == to_string(e) || s == short_label(e)) return e;
  }
  throw UnknownLabelError("expression '" + std::string(s) + "'");
}

inline Ethnicity parse_ethnicity(std::string_view s) {
  if (s == "Asian") return Ethnicity::Asian;
  if (s == "NonAsian" || s == "Non-Asian") return Ethnicity::NonAsian;
  throw UnknownLabelError("ethnicity '" + std::string(s) + "'");
}

}  // namespace facecue
