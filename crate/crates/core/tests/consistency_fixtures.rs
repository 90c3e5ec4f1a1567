mod common;

use apsrgen::consistency::{self, LocationRelation};

#[test]
fn labeled_violations_match() {
    let cases = common::consistency_cases();
    assert_eq!(cases.len(), 10);
    let mut wrong = Vec::new();
    for case in &cases {
        let report = consistency::check_violation(&case.right, &case.violation, &case.api, &case.rule);
        let (para, loc) = report.code.map(|t| (t.c_para, t.c_loc)).unwrap_or((None, LocationRelation::Unknown));
        if report.consistent != case.label.consistent || para != case.label.c_para || loc != case.label.c_loc {
            wrong.push(format!("{}: {report:?}", case.label.dir));
        }
    }
    assert!(wrong.is_empty(), "{wrong:#?}");
}
