//! Built-in word lists.

/// Common English function words.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "cannot", "could", "couldn", "did", "didn", "do", "does", "doesn",
    "doing", "don", "down", "during", "each", "either", "else", "etc", "ever", "few", "for",
    "from", "further", "had", "hadn", "has", "hasn", "have", "haven", "having", "he", "her",
    "here", "hers", "herself", "him", "himself", "his", "how", "however", "i", "if", "in",
    "into", "is", "isn", "it", "its", "itself", "just", "let", "ll", "me", "might", "more",
    "most", "must", "mustn", "my", "myself", "no", "nor", "not", "now", "of", "off", "on",
    "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out", "over", "own",
    "re", "same", "shall", "shan", "she", "should", "shouldn", "so", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "this", "those", "though", "through", "thus", "to", "too", "under", "until", "up", "us",
    "ve", "very", "via", "was", "wasn", "we", "were", "weren", "what", "when", "where",
    "whether", "which", "while", "who", "whom", "why", "will", "with", "within", "without",
    "won", "would", "wouldn", "yet", "you", "your", "yours", "yourself", "yourselves",
];

/// Keywords and primitive type names of the usual suspects (Java, C-family,
/// Python, JavaScript). Identifiers equal to one of these are dropped.
pub const CODE_KEYWORDS: &[&str] = &[
    "abstract", "and", "as", "assert", "async", "await", "bool", "boolean", "break", "byte",
    "case", "catch", "char", "class", "const", "continue", "def", "default", "del", "do",
    "double", "elif", "else", "enum", "except", "export", "extends", "extern", "false",
    "final", "finally", "float", "fn", "for", "from", "func", "function", "global", "goto",
    "if", "impl", "implements", "import", "in", "instanceof", "int", "interface", "is", "lambda",
    "let", "long", "mut", "native", "new", "nil", "none", "nonlocal", "not", "null", "or",
    "package", "pass", "private", "protected", "pub", "public", "raise", "return", "self",
    "short", "signed", "sizeof", "static", "strictfp", "struct", "super", "switch",
    "synchronized", "this", "throw", "throws", "transient", "true", "try", "typedef",
    "typeof", "unsigned", "use", "var", "void", "volatile", "while", "with", "yield",
];
