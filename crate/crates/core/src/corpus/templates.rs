//! Built-in MiniC templates for the synthetic corpus.
//!
//! The default eight tasks have structurally distinct control and data flow.
//! Two pairs (sum/average, factorial/power) are deliberately close in node
//! kind counts so that classifying them leans on structure rather than on
//! the bag of kinds. The similar-task set derives near-duplicate variants
//! from two shared bases, differing only by small kind-visible deltas.

/// (name, source) per default task, index = class id.
pub const DEFAULT_TEMPLATES: [(&str, &str); 8] = [
    (
        "iterative_sum",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i;\n    for (i = 0; i < n; i++) {\n        s = s + a[i];\n    }\n    return s;\n}\n",
    ),
    (
        "factorial",
        "int compute(int n) {\n    int r = 1;\n    while (n > 1) {\n        r = r * n;\n        n = n - 1;\n    }\n    return r;\n}\n",
    ),
    (
        "gcd",
        "int remainder(int a, int b) {\n    return a % b;\n}\nint compute(int a, int b) {\n    while (b > 0) {\n        int t = remainder(a, b);\n        a = b;\n        b = t;\n    }\n    return a;\n}\n",
    ),
    (
        "fibonacci",
        "int compute(int n) {\n    int a = 0;\n    int b = 1;\n    int i;\n    for (i = 0; i < n; i++) {\n        int t = a + b;\n        a = b;\n        b = t;\n    }\n    return a;\n}\n",
    ),
    (
        "max_of_array",
        "int compute(int a[], int n) {\n    int m = a[0];\n    int i;\n    for (i = 1; i < n; i++) {\n        if (a[i] > m) {\n            m = a[i];\n        }\n    }\n    return m;\n}\n",
    ),
    (
        "power",
        "int compute(int b, int e) {\n    int p = 1;\n    while (e > 0) {\n        p = p * b;\n        e = e - 1;\n    }\n    return p;\n}\n",
    ),
    (
        "sort_pass",
        "int compute(int a[], int n) {\n    int i;\n    int c = 0;\n    for (i = 0; i + 1 < n; i++) {\n        if (a[i] > a[i + 1]) {\n            int t = a[i];\n            a[i] = a[i + 1];\n            a[i + 1] = t;\n            c = c + 1;\n        }\n    }\n    return c;\n}\n",
    ),
    (
        "average",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i;\n    for (i = 0; i < n; i++) {\n        s = s + a[i];\n    }\n    s = s / n;\n    return s;\n}\n",
    ),
];

/// Near-duplicate accumulation variants over a shared base; group A sums an
/// array, group B multiplies a factor. Each variant's delta is kind-visible
/// (compound assignment, loop form, or guard).
pub const SIMILAR_GROUP_A: [(&str, &str); 5] = [
    (
        "sum_for",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i;\n    for (i = 0; i < n; i++) {\n        s = s + a[i];\n    }\n    return s;\n}\n",
    ),
    (
        "sum_for_compound",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i;\n    for (i = 0; i < n; i++) {\n        s += a[i];\n    }\n    return s;\n}\n",
    ),
    (
        "sum_while",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i = 0;\n    while (i < n) {\n        s = s + a[i];\n        i = i + 1;\n    }\n    return s;\n}\n",
    ),
    (
        "sum_positive",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i;\n    for (i = 0; i < n; i++) {\n        if (a[i] > 0) {\n            s = s + a[i];\n        }\n    }\n    return s;\n}\n",
    ),
    (
        "sum_do_while",
        "int compute(int a[], int n) {\n    int s = 0;\n    int i = 0;\n    do {\n        s = s + a[i];\n        i = i + 1;\n    } while (i < n);\n    return s;\n}\n",
    ),
];

pub const SIMILAR_GROUP_B: [(&str, &str); 5] = [
    (
        "product_for",
        "int compute(int b, int e) {\n    int p = 1;\n    int i;\n    for (i = 0; i < e; i++) {\n        p = p * b;\n    }\n    return p;\n}\n",
    ),
    (
        "product_for_compound",
        "int compute(int b, int e) {\n    int p = 1;\n    int i;\n    for (i = 0; i < e; i++) {\n        p *= b;\n    }\n    return p;\n}\n",
    ),
    (
        "product_while",
        "int compute(int b, int e) {\n    int p = 1;\n    int i = 0;\n    while (i < e) {\n        p = p * b;\n        i = i + 1;\n    }\n    return p;\n}\n",
    ),
    (
        "product_odd_guard",
        "int compute(int b, int e) {\n    int p = 1;\n    int i;\n    for (i = 0; i < e; i++) {\n        if (b > 0) {\n            p = p * b;\n        }\n    }\n    return p;\n}\n",
    ),
    (
        "product_countdown",
        "int compute(int b, int e) {\n    int p = 1;\n    int i;\n    for (i = e; i > 0; i--) {\n        p = p * b;\n    }\n    return p;\n}\n",
    ),
];

/// Task templates for a run: the default distinct set, or `num_tasks`
/// near-duplicates drawn alternately from the two similar groups.
pub fn task_templates(num_tasks: usize, similar: bool) -> Vec<(String, String)> {
    if !similar {
        assert!(
            num_tasks <= DEFAULT_TEMPLATES.len(),
            "at most {} default tasks",
            DEFAULT_TEMPLATES.len()
        );
        return DEFAULT_TEMPLATES[..num_tasks]
            .iter()
            .map(|(n, s)| (n.to_string(), s.to_string()))
            .collect();
    }
    assert!(
        num_tasks <= SIMILAR_GROUP_A.len() + SIMILAR_GROUP_B.len(),
        "at most {} similar tasks",
        SIMILAR_GROUP_A.len() + SIMILAR_GROUP_B.len()
    );
    let a_count = num_tasks.div_ceil(2);
    let b_count = num_tasks - a_count;
    let mut out = Vec::with_capacity(num_tasks);
    for (n, s) in SIMILAR_GROUP_A.iter().take(a_count) {
        out.push((n.to_string(), s.to_string()));
    }
    for (n, s) in SIMILAR_GROUP_B.iter().take(b_count) {
        out.push((n.to_string(), s.to_string()));
    }
    out
}
