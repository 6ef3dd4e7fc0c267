"""
Unit tests for report_template module.
"""
import pytest
import sys
import json
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from attend_affect.core.metrics import EvalReport, RatingSeries
from attend_affect.core.trainer import SweepCell
from attend_affect.core.windowing import Modality
from attend_affect.report_template import (
    config_header, format_attention, format_human_table, format_predictions, format_report, format_table,
    format_top_changes, table_json,
)


class TestReportTemplate:
    """Test text and CSV renderings."""

    def test_config_header(self):
        """Test the effective config becomes commented YAML."""
        assert config_header({"seed": 7}) == ["# seed: 7"]
        assert "# model:" in config_header({"model": {"kind": "MFT"}})

    def test_predictions_csv(self):
        """Test one row per window with its start time."""
        text = format_predictions(RatingSeries([0.125, 0.2], 1.0))
        assert text.splitlines() == ["window,start_s,value", "0,0.0,0.125", "1,1.0,0.2"]

    def test_top_changes_csv(self):
        """Test ranked rows carry window, start time and signed delta."""
        assert format_top_changes([(2, -0.5)]).splitlines() == ["rank,window,start_s,delta", "1,2,2.0,-0.5"]

    def test_attention_csv(self):
        """Test columns follow the fusion order."""
        order = (Modality.ACOUSTIC, Modality.VISUAL)
        text = format_attention([{Modality.ACOUSTIC: 0.25, Modality.VISUAL: 0.75}], order)
        assert text.splitlines() == ["window,start_s,A,V", "0,0.0,0.25,0.75"]

    def test_report_lines(self):
        """Test per-clip lines, the summary and the fallback note."""
        report = EvalReport("test", "SFT", "VA", ["clip0000", "clip0001"], [0.5, 0.3],
                            human_values=[0.7, 0.6], synthetic=True, ewe_fallbacks=1)
        lines = format_report(report).splitlines()
        assert lines[0] == "SFT(VA) on test (synthetic corpus)"
        assert lines[1].startswith("clip0000  CCC  0.5000  human  0.7000")
        assert lines[3] == "mean CCC 0.4000 ± 0.1000 over 2 clips"
        assert lines[-1].startswith("EWE fell back")

    def test_human_table(self):
        """Test the benchmark table ends with mean and std rows."""
        lines = format_human_table(["a"], [0.5], 0.5, 0.0).splitlines()
        assert lines == ["clip_id,human_ccc", "a,0.5", "mean,0.5", "std,0.0"]

    def test_results_table(self):
        """Test one row per cell with mean ± std, untrained mean and seeds, human rows last."""
        cell = SweepCell("MFT", "VAL", "test", seeds=[0, 1], ccc_values=[0.5, 0.3], untrained_values=[0.0, 0.02])
        human = EvalReport("test", "HUMAN", "", ["a", "b"], [0.6, 0.4])
        lines = format_table([cell], [human]).splitlines()
        assert len(lines) == 3
        assert lines[1].startswith("MFT") and lines[1].endswith("0,1")
        assert "0.4000 ± 0.1000" in lines[1] and "0.0100" in lines[1]
        assert lines[2].startswith("HUMAN") and "0.5000 ± 0.1000" in lines[2]
        payload = json.loads(table_json([cell], [human], {"seeds": [0, 1]}))
        assert payload["cells"][0]["mean"] == pytest.approx(0.4)
        assert payload["human"]["test"]["mean"] == pytest.approx(0.5)
        assert payload["config"]["seeds"] == [0, 1]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
