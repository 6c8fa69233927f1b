#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace codex {

struct Date {
  int year = 1970;
  int month = 1;  // 1-12
  int day = 1;    // 1-31

  friend bool operator==(const Date&, const Date&) = default;
};

// Days since 1970-01-01 (proleptic Gregorian).
std::int64_t days_from_civil(const Date& d);
Date civil_from_days(std::int64_t z);

bool is_valid_date(const Date& d);

// "YYYY-MM-DD"; rejects malformed or impossible dates.
std::optional<Date> parse_date(std::string_view s);
std::string to_iso(const Date& d);

inline std::int64_t days_between(const Date& from, const Date& to) {
  return days_from_civil(to) - days_from_civil(from);
}

inline bool date_less_equal(const Date& a, const Date& b) {
  return days_from_civil(a) <= days_from_civil(b);
}

// Completed years from birth to the reference date.
int age_years(const Date& birth, const Date& at);

}  // namespace codex
