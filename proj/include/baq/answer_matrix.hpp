#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "baq/persona_model.hpp"

namespace baq {

/// Dense users x questions answer matrix with kMissing gaps.
struct AnswerMatrix {
  std::size_t n_users = 0;
  std::size_t n_questions = 0;
  std::vector<Answer> values;

  std::span<const Answer> user(std::size_t u) const {
    return {values.data() + u * n_questions, n_questions};
  }
  std::span<Answer> user(std::size_t u) { return {values.data() + u * n_questions, n_questions}; }
  Answer at(std::size_t u, std::size_t x) const { return values[u * n_questions + x]; }

  bool operator==(const AnswerMatrix&) const = default;
};

}  // namespace baq
