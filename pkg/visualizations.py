import plotly.graph_objects as go
import pandas as pd
from typing import List, Optional


def create_loglog_chart(df: pd.DataFrame, x: str, y: str, group: Optional[str] = None, error: Optional[str] = None,
                        reference: Optional[str] = None, title: str = "", height: int = 500) -> go.Figure:
    """Creates a log-log scatter of y against x, one trace per group, with error bars"""
    fig = go.Figure()
    groups = df.groupby(group, sort=True) if group else [("", df)]
    for name, sub in groups:
        label = f"{group}={name}" if group else y
        fig.add_trace(go.Scatter(
            x=sub[x],
            y=sub[y],
            mode="lines+markers",
            name=label,
            error_y=dict(type="data", array=sub[error], visible=True) if error else None,
        ))
        # Identité exacte en pointillés
        if reference and sub[reference].notna().any():
            fig.add_trace(go.Scatter(
                x=sub[x],
                y=sub[reference],
                mode="lines",
                line=dict(dash="dash"),
                name=f"{label} ({reference})",
            ))

    fig.update_layout(
        title_text=title,
        xaxis_title=x,
        yaxis_title=y,
        xaxis_type="log",
        yaxis_type="log",
        height=height,
        template="plotly_white"
    )
    return fig


def create_series_chart(df: pd.DataFrame, x: str, columns: List[str], title: str = "", log_y: bool = False,
                        height: int = 450) -> go.Figure:
    """Creates a line chart with one trace per column"""
    fig = go.Figure()
    for col in columns:
        fig.add_trace(go.Scatter(x=df[x], y=df[col], mode="lines+markers", name=col))

    fig.update_layout(
        title_text=title,
        xaxis_title=x,
        yaxis_type="log" if log_y else "linear",
        height=height,
        template="plotly_white"
    )
    return fig


def create_violation_chart(summary: pd.DataFrame, title: str = "Violations per inequality", height: int = 400) -> go.Figure:
    """Bar chart of violation counts, explicit-constant inequalities in red"""
    colors = ["#c0392b" if explicit else "#2980b9" for explicit in summary["explicit"]]
    fig = go.Figure(data=[
        go.Bar(
            x=summary["inequality_id"],
            y=summary["violations"],
            marker_color=colors,
            text=summary["violations"],
            textposition="auto"
        )
    ])
    fig.update_layout(
        title_text=title,
        xaxis_title="Inequality",
        yaxis_title="Violations",
        height=height,
        template="plotly_white"
    )
    return fig
