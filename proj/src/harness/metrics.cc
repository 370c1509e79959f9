// Copyright (c) 2026 Accentfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "harness/metrics.h"

#include <algorithm>
#include <iomanip>

namespace af {

EditCounts edit_distance(const std::vector<int64_t>& ref,
                         const std::vector<int64_t>& hyp) {
  const int64_t n = static_cast<int64_t>(ref.size());
  const int64_t m = static_cast<int64_t>(hyp.size());
  std::vector<int64_t> d((n + 1) * (m + 1));
  auto at = [&](int64_t i, int64_t j) -> int64_t& { return d[i * (m + 1) + j]; };
  for (int64_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (int64_t j = 0; j <= m; ++j) at(0, j) = j;
  for (int64_t i = 1; i <= n; ++i) {
    for (int64_t j = 1; j <= m; ++j) {
      const int64_t sub = at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1] ? 1 : 0);
      const int64_t del = at(i - 1, j) + 1;
      const int64_t ins = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, del, ins});
    }
  }
  EditCounts out;
  out.distance = at(n, m);
  // Backtrace one optimal alignment, preferring the diagonal on ties.
  int64_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1] ? 1 : 0)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.subs;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.del;
      --i;
    } else {
      ++out.ins;
      --j;
    }
  }
  return out;
}

void EvalReport::print(std::ostream& os, const std::string& row_label) const {
  os << "model\taid_acc";
  os << "\ttotal";
  for (size_t a = 0; a < per_accent.size(); ++a) os << "\taccent" << a;
  os << "\n";
  os << row_label << "\t";
  os << std::fixed << std::setprecision(2);
  if (has_aid) {
    os << 100.0 * aid_accuracy();
  } else {
    os << "-";
  }
  os << "\t" << 100.0 * total_cer();
  for (size_t a = 0; a < per_accent.size(); ++a)
    os << "\t" << 100.0 * accent_cer(a);
  os << "\n";
  os << "utterances\t" << utterances << "\tskipped\t" << skipped << "\n";
  os << "edits\tS\t" << totals.subs << "\tI\t" << totals.ins << "\tD\t"
     << totals.del << "\tref_len\t" << ref_len << "\n";
}

}  // namespace af
