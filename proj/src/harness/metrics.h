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

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace af {

struct EditCounts {
  int64_t distance = 0;
  int64_t subs = 0;
  int64_t ins = 0;
  int64_t del = 0;
};

// Unit-cost Levenshtein with S/I/D counts from one optimal alignment; on
// cost ties the backtrace prefers a substitution over an insert+delete pair.
EditCounts edit_distance(const std::vector<int64_t>& ref,
                         const std::vector<int64_t>& hyp);

struct EvalReport {
  int64_t utterances = 0;
  int64_t skipped = 0;
  EditCounts totals;
  int64_t ref_len = 0;
  std::vector<EditCounts> per_accent;
  std::vector<int64_t> per_accent_ref_len;
  std::vector<int64_t> per_accent_count;
  int64_t aid_correct = 0;
  bool has_aid = false;

  double total_cer() const {
    return ref_len == 0 ? 0.0
                        : double(totals.subs + totals.ins + totals.del) /
                              double(ref_len);
  }
  double accent_cer(int64_t a) const {
    return per_accent_ref_len[a] == 0
               ? 0.0
               : double(per_accent[a].subs + per_accent[a].ins +
                        per_accent[a].del) /
                     double(per_accent_ref_len[a]);
  }
  double aid_accuracy() const {
    return utterances == 0 ? 0.0 : double(aid_correct) / double(utterances);
  }

  // Tab-separated table: header plus one row (AID ACC %, total CER %, then
  // per-accent CER %), followed by count lines.
  void print(std::ostream& os, const std::string& row_label) const;
};

}  // namespace af
